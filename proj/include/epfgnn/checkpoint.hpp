#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/gcn.hpp"
#include "epfgnn/mrf.hpp"

// Binary parameter file, all integers and doubles little-endian:
//
//   "EPFGCKPT" | u32 version | u32 block count
//   per block: u32 tag | u32 aux | u64 rows | u64 cols | rows*cols f64
//
// Tags: 0 = W0, 1 = W1, 2 = raw compatibility M, 3 = α (aux holds the
// coefficient mode). A backbone-only file has just the first two blocks;
// otherwise a u64 edge count follows the last block.

namespace epfgnn {

inline constexpr std::array<char, 8> kCheckpointMagic{'E', 'P', 'F', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class BlockTag : std::uint32_t { w0 = 0, w1 = 1, compat = 2, alpha = 3 };

struct Checkpoint {
  GcnParams backbone;
  std::optional<PairwiseParams> pairwise;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T get_le(std::istream& in, const char* what) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw ParseError("checkpoint", 0, std::string("truncated ") + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void put_block(std::ostream& out, BlockTag tag, std::uint32_t aux, std::size_t rows,
                      std::size_t cols, std::span<const double> data) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tag));
  put_le<std::uint32_t>(out, aux);
  put_le<std::uint64_t>(out, rows);
  put_le<std::uint64_t>(out, cols);
  for (double v : data) put_le<double>(out, v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const GcnParams& backbone,
                             const PairwiseParams* pairwise = nullptr) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, pairwise ? 4 : 2);
  detail::put_block(out, BlockTag::w0, 0, backbone.w0.rows(), backbone.w0.cols(),
                    backbone.w0.values());
  detail::put_block(out, BlockTag::w1, 0, backbone.w1.rows(), backbone.w1.cols(),
                    backbone.w1.values());
  if (pairwise) {
    const DenseMatrix& m = pairwise->raw();
    detail::put_block(out, BlockTag::compat, 0, m.rows(), m.cols(), m.values());
    const auto a = pairwise->alpha_values();
    detail::put_block(out, BlockTag::alpha, static_cast<std::uint32_t>(pairwise->mode()), 1,
                      a.size(), a);
    detail::put_le<std::uint64_t>(out, pairwise->num_edges());
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw ParseError("checkpoint", 0, "bad magic");
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint", 0, "unsupported version " + std::to_string(version));
  const auto blocks = detail::get_le<std::uint32_t>(in, "block count");
  if (blocks != 2 && blocks != 4)
    throw ParseError("checkpoint", 0, "unexpected block count " + std::to_string(blocks));

  Checkpoint ck;
  DenseMatrix compat;
  std::vector<double> alpha;
  std::uint32_t mode = 0;
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const auto tag = detail::get_le<std::uint32_t>(in, "block tag");
    const auto aux = detail::get_le<std::uint32_t>(in, "block aux");
    const auto rows = detail::get_le<std::uint64_t>(in, "rows");
    const auto cols = detail::get_le<std::uint64_t>(in, "cols");
    if (tag != b) throw ParseError("checkpoint", 0, "block " + std::to_string(b) + " out of order");
    if (rows > (std::uint64_t{1} << 32) || cols > (std::uint64_t{1} << 32))
      throw ParseError("checkpoint", 0, "implausible block shape");
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = detail::get_le<double>(in, "block data");
    switch (static_cast<BlockTag>(tag)) {
      case BlockTag::w0: ck.backbone.w0 = std::move(m); break;
      case BlockTag::w1: ck.backbone.w1 = std::move(m); break;
      case BlockTag::compat: compat = std::move(m); break;
      case BlockTag::alpha:
        mode = aux;
        alpha.assign(m.values().begin(), m.values().end());
        break;
    }
  }
  if (ck.backbone.w0.cols() != ck.backbone.w1.rows())
    throw ParseError("checkpoint", 0, "W0/W1 shapes disagree");
  if (blocks == 4) {
    const auto num_edges = detail::get_le<std::uint64_t>(in, "edge count");
    if (mode > 2) throw ParseError("checkpoint", 0, "unknown coefficient mode");
    if (compat.rows() != compat.cols() || compat.rows() != ck.backbone.num_classes())
      throw ParseError("checkpoint", 0, "compatibility shape disagrees with W1");
    PairwiseParams pp(compat.rows(), num_edges, static_cast<CoefficientMode>(mode));
    if (alpha.size() != pp.alpha_values().size())
      throw ParseError("checkpoint", 0, "coefficient count disagrees with mode");
    pp.raw() = std::move(compat);
    std::copy(alpha.begin(), alpha.end(), pp.alpha_values().begin());
    ck.pairwise = std::move(pp);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const GcnParams& backbone,
                            const PairwiseParams* pairwise = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, backbone, pairwise);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace epfgnn
