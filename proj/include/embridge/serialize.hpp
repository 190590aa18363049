#pragma once

#include <iosfwd>

#include "embridge/encoder.hpp"
#include "embridge/proxy.hpp"
#include "embridge/world.hpp"

namespace embridge {

// Text formats, one value per token, doubles at full precision so that
// write/read round-trips are bit-exact. Checkpoints open with
// "EBCKPT <version> <kind>", world files with "EBWORLD <version>".

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kWorldVersion = 1;

void save_encoder(const Encoder& enc, const std::string& path);
Encoder load_encoder(const std::string& path);

void save_predictor(const ProxyPredictor& p, const std::string& path);
ProxyPredictor load_predictor(const std::string& path);

void save_world(const World& w, const std::string& path);
World load_world(const std::string& path);

std::string world_to_string(const World& w);

/// FNV-1a 64-bit fingerprint of the serialized world, as fixed-width hex.
std::string world_hash(const World& w);

std::string file_sha_like_hash(const std::string& path);  // FNV over bytes

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace embridge
