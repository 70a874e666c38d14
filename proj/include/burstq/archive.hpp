#pragma once

// Minimal POSIX ustar reader/writer for result archives. Regular files only,
// flat names, mode 0644, mtime 0 so that equal contents give equal bytes.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace burstq {

using ArchiveEntries = std::vector<std::pair<std::string, std::string>>;

std::string write_tar(const ArchiveEntries& files);

/// Throws Error(MalformedPayload) on a damaged archive.
ArchiveEntries read_tar(std::string_view archive);

}  // namespace burstq
