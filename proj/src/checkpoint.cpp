#include "aeda/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "aeda/errors.hpp"
#include "wire.hpp"

namespace aeda {

namespace {

constexpr char kMagic[5] = {'A', 'E', 'D', 'A', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<const LayerParams*>& layers) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  for (const LayerParams* p : layers) {
    const unsigned char kind = p->kind == ParamKind::conv ? 0 : 1;
    os.put(static_cast<char>(kind));
    wire::put_u32(os, static_cast<std::uint32_t>(p->weights.ndim()));
    for (std::size_t i = 0; i < p->weights.ndim(); ++i)
      wire::put_u32(os, static_cast<std::uint32_t>(p->weights.dim(i)));
    for (std::size_t i = 0; i < p->weights.size(); ++i) wire::put_f64(os, p->weights[i]);
    for (std::size_t i = 0; i < p->bias.size(); ++i) wire::put_f64(os, p->bias[i]);
    os.put(p->frozen ? '\1' : '\0');
  }
  os.flush();
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

void save_checkpoint(const std::string& path, LayerStack& stack) {
  std::vector<const LayerParams*> ps;
  for (LayerParams* p : stack.params()) ps.push_back(p);
  save_checkpoint(path, ps);
}

std::vector<LayerParams> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not an AEDA1 checkpoint: " + path);
  std::vector<LayerParams> out;
  for (;;) {
    const int kind_byte = is.get();
    if (kind_byte == std::char_traits<char>::eof()) break;
    if (kind_byte != 0 && kind_byte != 1)
      throw DataError("unknown layer kind " + std::to_string(kind_byte) + " in " + path);
    LayerParams p;
    p.kind = kind_byte == 0 ? ParamKind::conv : ParamKind::dense;
    const std::uint32_t ndim = wire::get_u32(is, path);
    const std::uint32_t expect = p.kind == ParamKind::conv ? 4 : 2;
    if (ndim != expect)
      throw DataError("checkpoint layer has " + std::to_string(ndim) + " weight dims, expected " +
                      std::to_string(expect) + ": " + path);
    Shape shape(ndim);
    for (auto& d : shape) {
      d = wire::get_u32(is, path);
      if (d == 0) throw DataError("zero dimension in checkpoint: " + path);
    }
    p.weights = Tensor(shape);
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] = wire::get_f64(is, path);
    p.bias = Tensor({shape[0]});
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = wire::get_f64(is, path);
    const int frozen = is.get();
    if (frozen == std::char_traits<char>::eof())
      throw DataError("truncated checkpoint: " + path);
    if (frozen != 0 && frozen != 1)
      throw DataError("bad frozen flag in checkpoint: " + path);
    p.frozen = frozen == 1;
    out.push_back(std::move(p));
  }
  return out;
}

void restore_params(LayerStack& stack, const std::vector<LayerParams>& loaded) {
  std::vector<LayerParams*> live = stack.params();
  if (live.size() != loaded.size())
    throw DataError("checkpoint has " + std::to_string(loaded.size()) + " parameter layers, stack has " +
                    std::to_string(live.size()));
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (live[i]->kind != loaded[i].kind)
      throw DataError("layer " + std::to_string(i) + " kind mismatch between stack and checkpoint");
    if (live[i]->weights.shape() != loaded[i].weights.shape())
      throw DataError("layer " + std::to_string(i) + " weight shape " +
                      shape_str(live[i]->weights.shape()) + " does not match checkpoint " +
                      shape_str(loaded[i].weights.shape()));
    live[i]->weights.values() = loaded[i].weights.values();
    live[i]->bias.values() = loaded[i].bias.values();
    live[i]->frozen = loaded[i].frozen;
  }
}

void load_into(const std::string& path, LayerStack& stack) {
  restore_params(stack, load_checkpoint(path));
}

}  // namespace aeda
