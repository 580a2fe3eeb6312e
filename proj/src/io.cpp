#include "condseq/io.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "condseq/errors.hpp"

namespace condseq {

namespace fs = std::filesystem;

namespace {

fs::path temp_name(const fs::path& target, std::string_view tag) {
  static unsigned counter = 0;
  const fs::path parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
  return parent / ("." + target.filename().string() + "." + std::string(tag) + "-" + std::to_string(::getpid()) +
                   "-" + std::to_string(counter++));
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view contents) {
  const fs::path tmp = temp_name(path, "tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

fs::path make_temp_sibling(const fs::path& target) {
  const fs::path dir = temp_name(target, "staging");
  std::error_code ec;
  fs::remove_all(dir, ec);
  if (!fs::create_directories(dir, ec) || ec) throw IoError("cannot create staging directory " + dir.string());
  return dir;
}

void commit_directory(const fs::path& staging, const fs::path& target) {
  std::error_code ec;
  fs::path backup;
  if (fs::exists(target)) {
    backup = temp_name(target, "old");
    fs::rename(target, backup, ec);
    if (ec) throw IoError("cannot replace existing " + target.string());
  }
  fs::rename(staging, target, ec);
  if (ec) {
    if (!backup.empty()) fs::rename(backup, target, ec);
    throw IoError("cannot move " + staging.string() + " to " + target.string());
  }
  if (!backup.empty()) fs::remove_all(backup, ec);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace condseq
