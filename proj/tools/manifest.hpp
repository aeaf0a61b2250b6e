#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace dfd::cli {

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);
/// FNV-1a of a file's bytes as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Per-purpose seed derived from the run seed; stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

/// Writes `body` plus "volatile": {"created_utc"}; nothing else in the file
/// depends on wall-clock time.
void write_manifest(const std::filesystem::path& path, nlohmann::json body);
nlohmann::json read_manifest(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dfd::cli
