#pragma once

#include <map>
#include <optional>
#include <string>

#include "graphdiff/nn.hpp"

namespace graphdiff::runio {

// Guards a run directory against concurrent writers for the lifetime of the
// stage; throws if another lock is present.
class LockFile {
 public:
  explicit LockFile(const std::string& dir);
  ~LockFile();
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
};

void ensure_dir(const std::string& dir);

// Per-stage manifest describing the newest checkpoint and the checkpoint ids
// of the stages it depends on.
struct StageManifest {
  std::string stage;
  std::int64_t step = 0;
  std::string file;  // checkpoint filename relative to the stage dir
  std::string id;
  std::map<std::string, std::string> upstream;
};

void write_stage_checkpoint(const std::string& dir, const std::string& stage,
                            std::int64_t step, const nn::Checkpoint& ck,
                            const std::map<std::string, std::string>& upstream);
std::optional<StageManifest> read_stage_manifest(const std::string& dir);

// Loads the stage's newest checkpoint and verifies the manifest id matches
// the file contents.
nn::Checkpoint load_stage_checkpoint(const std::string& dir, const StageManifest& manifest);

void append_text(const std::string& path, const std::string& text);

}  // namespace graphdiff::runio
