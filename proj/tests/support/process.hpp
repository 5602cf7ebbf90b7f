#pragma once

#include <sys/types.h>

#include <map>
#include <string>
#include <vector>

#include "dget/common/canonical.hpp"

namespace dget::testing {

struct CliResult {
  int exit = -1;
  std::string out;
  std::string err;
};

/// Path of the built dgetctl binary.
std::string dgetctl_path();

/// Runs dgetctl with `args`; `env` entries are added to the environment.
CliResult run_cli(const std::vector<std::string>& args, const std::map<std::string, std::string>& env = {});

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }
  std::string write(const std::string& name, const std::string& text) const;

 private:
  std::string path_;
};

/// `dgetctl -o structured nucleus run --config PATH` as a child process.
/// The constructor waits for the ready line; the destructor sends SIGTERM.
class NucleusProcess {
 public:
  explicit NucleusProcess(const std::string& config_path);
  ~NucleusProcess();
  NucleusProcess(const NucleusProcess&) = delete;
  NucleusProcess& operator=(const NucleusProcess&) = delete;

  const std::string& id() const { return id_; }
  const std::string& wire() const { return wire_; }
  const std::string& admin() const { return admin_; }
  /// Sends SIGTERM and returns the exit status.
  int terminate();

 private:
  pid_t pid_ = -1;
  int out_fd_ = -1;
  std::string id_;
  std::string wire_;
  std::string admin_;
};

}  // namespace dget::testing
