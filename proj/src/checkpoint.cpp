#include "lpr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lpr {

namespace {

constexpr char kMagic[4] = {'L', 'P', 'R', 'W'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), std::streamsize(n)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  // `what` names the field for the truncation message.
  template <typename T>
  T get(const std::string& what) {
    T v;
    bytes(&v, sizeof(T), what);
    return v;
  }
  void bytes(void* p, std::size_t n, const std::string& what) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) {
      throw TruncatedCheckpointError(path_ + ": file ends inside " + what);
    }
  }
  std::string str(std::size_t n, const std::string& what) {
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

 private:
  std::istream& in_;
  std::string path_;
};

void check_u16(std::size_t n, const std::string& what) {
  if (n > 0xFFFF) throw CheckpointError(what + " longer than 65535 bytes");
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  Writer w(buf);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(std::uint32_t(ckpt.tensors.size()));
  for (const CheckpointTensor& t : ckpt.tensors) {
    check_u16(t.name.size(), "tensor name");
    if (shape_size(t.dims) != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                            " values for shape " + to_string(t.dims));
    }
    w.put<std::uint16_t>(std::uint16_t(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put<std::uint32_t>(std::uint32_t(t.dims.size()));
    for (std::size_t d : t.dims) w.put<std::uint32_t>(std::uint32_t(d));
    w.bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  w.put<std::uint32_t>(std::uint32_t(ckpt.metadata.size()));
  for (const auto& [key, value] : ckpt.metadata) {
    check_u16(key.size(), "metadata key");
    w.put<std::uint16_t>(std::uint16_t(key.size()));
    w.bytes(key.data(), key.size());
    w.put<std::uint32_t>(std::uint32_t(value.size()));
    w.bytes(value.data(), value.size());
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::string data = buf.str();
    out.write(data.data(), std::streamsize(data.size()));
    out.flush();
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagicError(path.string() + ": not a weight file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("the version field");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(path.string() + ": format version " + std::to_string(version) +
                               ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  const auto count = r.get<std::uint32_t>("the tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = r.get<std::uint16_t>(where + " name length");
    t.name = r.str(name_len, where + " name");
    const std::string named = "tensor '" + t.name + "'";
    const auto rank = r.get<std::uint32_t>(named + " rank");
    if (rank > Tensor::kMaxRank) {
      throw CheckpointError(path.string() + ": " + named + " has rank " + std::to_string(rank));
    }
    for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(r.get<std::uint32_t>(named + " dims"));
    t.values.resize(shape_size(t.dims));
    r.bytes(t.values.data(), t.values.size() * sizeof(float), named + " payload");
    ckpt.tensors.push_back(std::move(t));
  }
  const auto meta = r.get<std::uint32_t>("the metadata count");
  for (std::uint32_t i = 0; i < meta; ++i) {
    const auto klen = r.get<std::uint16_t>("metadata key length");
    std::string key = r.str(klen, "metadata key");
    const auto vlen = r.get<std::uint32_t>("metadata '" + key + "' length");
    ckpt.metadata[key] = r.str(vlen, "metadata '" + key + "' value");
  }
  return ckpt;
}

Checkpoint snapshot(const TensorList& tensors) {
  Checkpoint ckpt;
  for (const NamedTensor& nt : tensors) {
    CheckpointTensor t{nt.name, nt.tensor->shape(), {}};
    t.values.reserve(nt.tensor->size());
    for (double v : nt.tensor->data()) t.values.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void restore(const TensorList& tensors, const Checkpoint& ckpt) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const CheckpointTensor& t : ckpt.tensors) by_name[t.name] = &t;
  for (const NamedTensor& nt : tensors) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw CheckpointMismatchError("checkpoint lacks tensor '" + nt.name + "'");
    const CheckpointTensor& t = *it->second;
    if (t.dims != nt.tensor->shape()) {
      throw CheckpointMismatchError("tensor '" + nt.name + "' is " + to_string(t.dims) +
                                    " in the checkpoint but " + to_string(nt.tensor->shape()) +
                                    " in the model");
    }
    for (std::size_t i = 0; i < t.values.size(); ++i) (*nt.tensor)[i] = double(t.values[i]);
  }
}

void round_to_float32(const TensorList& tensors) {
  for (const NamedTensor& nt : tensors)
    for (double& v : nt.tensor->data()) v = double(static_cast<float>(v));
}

namespace {
std::string meta(const Checkpoint& ckpt, const std::string& key, const std::filesystem::path& path) {
  auto it = ckpt.metadata.find(key);
  if (it == ckpt.metadata.end()) {
    throw CheckpointMismatchError(path.string() + ": metadata '" + key + "' missing");
  }
  return it->second;
}

void expect_kind(const Checkpoint& ckpt, const std::string& kind, const std::filesystem::path& path) {
  const std::string got = meta(ckpt, "model", path);
  if (got != kind) {
    throw CheckpointMismatchError(path.string() + " holds a " + got + " model, expected " + kind);
  }
}
}  // namespace

void save_weights(RecognizerModel& model, const Alphabet& alphabet,
                  const std::filesystem::path& path) {
  if (alphabet.num_classes() != int(model.config().num_classes)) {
    throw CheckpointMismatchError("alphabet has " + std::to_string(alphabet.num_classes()) +
                                  " classes, model has " + std::to_string(model.config().num_classes));
  }
  Checkpoint ckpt = snapshot(model.tensors());
  std::ostringstream width;
  width.precision(17);
  width << model.config().width;
  ckpt.metadata = {{"model", "recognizer"},
                   {"alphabet", alphabet.symbols()},
                   {"width", width.str()},
                   {"num_classes", std::to_string(model.config().num_classes)},
                   {"input_shape", "128,32,2"}};
  write_checkpoint(ckpt, path);
}

LoadedRecognizer load_recognizer(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  expect_kind(ckpt, "recognizer", path);
  Alphabet alphabet(meta(ckpt, "alphabet", path));
  RecognizerConfig config;
  config.num_classes = std::size_t(alphabet.num_classes());
  config.width = std::stod(meta(ckpt, "width", path));
  LoadedRecognizer out{RecognizerModel(config), std::move(alphabet)};
  restore(out.model.tensors(), ckpt);
  return out;
}

void save_weights(CornerModel& model, const std::filesystem::path& path) {
  Checkpoint ckpt = snapshot(model.tensors());
  ckpt.metadata = {{"model", "corners"}, {"input_shape", "128,32,2"}};
  write_checkpoint(ckpt, path);
}

CornerModel load_corner_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  expect_kind(ckpt, "corners", path);
  CornerModel model(0);
  restore(model.tensors(), ckpt);
  return model;
}

}  // namespace lpr
