#pragma once

#include <string>
#include <vector>

#include "aeda/layers.hpp"
#include "aeda/ops.hpp"

namespace aeda {

// Flat binary parameter container: magic "AEDA1", then per layer in stack
// order: kind byte, u32 dim count + u32 dims (little-endian, weights shape),
// raw little-endian 64-bit reals for weights then bias, frozen flag byte.
// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const std::vector<const LayerParams*>& layers);
void save_checkpoint(const std::string& path, LayerStack& stack);

std::vector<LayerParams> load_checkpoint(const std::string& path);

// Copies loaded parameters into a stack of matching architecture.
void restore_params(LayerStack& stack, const std::vector<LayerParams>& loaded);
void load_into(const std::string& path, LayerStack& stack);

}  // namespace aeda
