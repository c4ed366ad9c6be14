#pragma once

#include <string>

#include "xbe/model.hpp"

namespace xbe {

// Checkpoint layout: magic "XBE1", one version byte, a manifest of
// (name, shape, payload offset) entries sorted by name, then raw
// little-endian 64-bit float payloads. Round-trips bitwise.
void save_checkpoint(const std::string& path, const XbeModel& model);
XbeModel load_checkpoint(const std::string& path);

}  // namespace xbe
