#pragma once

#include <cstdint>
#include <string>

namespace densiclip {

// Whole-file text I/O. Writes go to a temp file in the same directory and
// are renamed into place, so readers never observe partial content.
std::string read_text_file(const std::string& path);
void atomic_write_text(const std::string& path, const std::string& content);

// rename() wrapper that reports failures as io_error.
void rename_over(const std::string& from, const std::string& to);

void ensure_directory(const std::string& path);

// FNV-1a of a byte sequence / a file's content, for provenance digests.
uint64_t fnv1a(const void* data, size_t size);
uint64_t fnv1a_file(const std::string& path);

} // namespace densiclip
