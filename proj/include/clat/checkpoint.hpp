#pragma once

#include <string>

#include "clat/network.hpp"
#include "clat/trainer.hpp"

namespace clat {

struct Checkpoint {
  Network net;
  TrainState state;
};

/// Binary checkpoint: "CLTF" magic, format version, architecture
/// descriptor, per-layer parameter blobs (little-endian float32, layer
/// order, weights then bias), optimizer state, epoch and seed, finished
/// with a checksum of everything before it. save -> load -> save is
/// byte-identical.
void save_checkpoint(const Network& net, const TrainState& state, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// True when the two networks have identical architecture (layer kinds,
/// geometry and post-ops), regardless of parameter values.
bool same_architecture(const Network& a, const Network& b);

}  // namespace clat
