#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace condseq {

/// Writes `contents` to a temporary sibling file and renames it over `path`.
/// Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Returns a fresh, empty temporary sibling directory for `target`.
std::filesystem::path make_temp_sibling(const std::filesystem::path& target);

/// Moves a fully written `staging` directory into place at `target`,
/// replacing any existing directory.
void commit_directory(const std::filesystem::path& staging, const std::filesystem::path& target);

/// Whole-file read. Throws IoError.
std::string read_file(const std::filesystem::path& path);

}  // namespace condseq
