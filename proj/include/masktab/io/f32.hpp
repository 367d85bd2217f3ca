#pragma once

#include <filesystem>
#include <vector>

namespace masktab::io {

/// Little-endian float32 payloads. Values are narrowed on write.
void write_f32(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const std::filesystem::path& path);

}  // namespace masktab::io
