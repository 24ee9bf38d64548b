#pragma once

// Binary weight files.
//
//   "LPRW"                       4 bytes
//   version                      u32
//   tensor count                 u32
//   per tensor: name length u16, name bytes, rank u32, dims u32 x rank,
//               payload f32 x prod(dims)
//   metadata count               u32
//   per entry:  key length u16, key, value length u32, value
//
// All integers and floats are little-endian. Files are written to a
// temporary sibling and renamed into place.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpr/blocks.hpp"
#include "lpr/ctc.hpp"
#include "lpr/models.hpp"

namespace lpr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// The file is well formed but does not fit the model it is loaded into.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  std::map<std::string, std::string> metadata;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every tensor (running statistics included) as float32.
Checkpoint snapshot(const TensorList& tensors);
/// Loads values by name. Throws CheckpointMismatchError when a tensor is
/// missing or its shape differs.
void restore(const TensorList& tensors, const Checkpoint& ckpt);

/// Rounds every value to the nearest float32, the checkpoint's precision.
void round_to_float32(const TensorList& tensors);

void save_weights(RecognizerModel& model, const Alphabet& alphabet,
                  const std::filesystem::path& path);
struct LoadedRecognizer {
  RecognizerModel model;
  Alphabet alphabet;
};
LoadedRecognizer load_recognizer(const std::filesystem::path& path);

void save_weights(CornerModel& model, const std::filesystem::path& path);
CornerModel load_corner_model(const std::filesystem::path& path);

}  // namespace lpr
