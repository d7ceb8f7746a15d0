#include "histlayer/checkpoint.hpp"

#include "histlayer/binary_io.hpp"
#include "histlayer/error.hpp"

namespace histlayer {

std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter* const> params) {
  ByteWriter w;
  w.magic("HPRM");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.string(p->name);
    const Shape& s = p->shape();
    w.u32(static_cast<std::uint32_t>(s.n));
    w.u32(static_cast<std::uint32_t>(s.c));
    w.u32(static_cast<std::uint32_t>(s.h));
    w.u32(static_cast<std::uint32_t>(s.w));
    for (double v : p->value.values()) w.f64(v);
    for (double v : p->momentum.values()) w.f64(v);
    for (double m : p->lock_mask.values()) w.u8(m != 0.0 ? 1 : 0);
  }
  return w.take();
}

std::vector<Parameter> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("HPRM");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, "checkpoint: version " + std::to_string(version) +
                                                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t count = r.u32();
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string();
    Shape s{r.u32(), r.u32(), r.u32(), r.u32()};
    Tensor value(s);
    for (double& v : value.values()) v = r.f64();
    Parameter p(std::move(name), std::move(value));
    for (double& v : p.momentum.values()) v = r.f64();
    for (double& m : p.lock_mask.values()) {
      const std::uint8_t b = r.u8();
      if (b > 1) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: lock mask byte " + std::to_string(b));
      m = b;
    }
    out.push_back(std::move(p));
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::kCorrupt,
                      "checkpoint: " + std::to_string(r.remaining()) + " trailing bytes after last parameter");
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  write_file(path, encode_checkpoint(params));
}

std::vector<Parameter> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace histlayer
