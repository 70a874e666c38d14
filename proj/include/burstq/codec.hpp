#pragma once

// JSON encoding of the persistent records. The same encoding is used by the
// journal, the snapshot and the HTTP API, so it is stable and versioned
// through the store's format header.

#include <json.hpp>

#include "burstq/model.hpp"

namespace burstq {

void to_json(nlohmann::json& j, const DatasetProfile& p);
void from_json(const nlohmann::json& j, DatasetProfile& p);
void to_json(nlohmann::json& j, const JobSpec& s);
void from_json(const nlohmann::json& j, JobSpec& s);
void to_json(nlohmann::json& j, const JobRecord& r);
void from_json(const nlohmann::json& j, JobRecord& r);
void to_json(nlohmann::json& j, const VmRecord& r);
void from_json(const nlohmann::json& j, VmRecord& r);

/// VM view safe to hand to clients (no push secret).
nlohmann::json public_view(const VmRecord& r);

}  // namespace burstq
