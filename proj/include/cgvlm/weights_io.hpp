#pragma once

// Flat binary serialization of decoder weights.
//
// Layout (little-endian):
//   bytes 0..3   magic "CGVW"
//   u32          format version (1)
//   u32 x 9      n_layers, n_heads, d_model, vocab_size, n_visual_slots,
//                max_seq, band_lo, band_hi, pad_token
//   f64          drift_lambda
//   f64 ...      matrices, row-major, in order: embedding, vis_proj,
//                per layer {wq, wk, wv, wo, ff1, ff2}, unembed

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "cgvlm/decoder.hpp"

namespace cgvlm {

namespace detail {

inline void write_u32le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32le(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("weights file: truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f64le(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64le(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("weights file: truncated data");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

inline void write_matrix(std::ostream& os, const Matrix& m) {
    for (double v : m.data) write_f64le(os, v);
}

inline void read_matrix(std::istream& is, Matrix& m) {
    for (double& v : m.data) v = read_f64le(is);
}

}  // namespace detail

inline constexpr uint32_t kWeightsFormatVersion = 1;

inline void save_weights(const std::string& path, const DecoderConfig& cfg,
                         const DecoderWeights& w) {
    w.validate(cfg);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open weights file for writing: " + path);
    os.write("CGVW", 4);
    detail::write_u32le(os, kWeightsFormatVersion);
    for (int v : {cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.vocab_size, cfg.n_visual_slots,
                  cfg.max_seq, cfg.band_lo, cfg.band_hi, cfg.pad_token})
        detail::write_u32le(os, static_cast<uint32_t>(v));
    detail::write_f64le(os, w.drift_lambda);
    detail::write_matrix(os, w.embedding);
    detail::write_matrix(os, w.vis_proj);
    for (const auto& l : w.layers) {
        detail::write_matrix(os, l.wq);
        detail::write_matrix(os, l.wk);
        detail::write_matrix(os, l.wv);
        detail::write_matrix(os, l.wo);
        detail::write_matrix(os, l.ff1);
        detail::write_matrix(os, l.ff2);
    }
    detail::write_matrix(os, w.unembed);
    if (!os) throw std::runtime_error("failed writing weights file: " + path);
}

inline std::pair<DecoderConfig, DecoderWeights> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open weights file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CGVW", 4) != 0)
        throw std::runtime_error("weights file: bad magic");
    uint32_t version = detail::read_u32le(is);
    if (version != kWeightsFormatVersion)
        throw std::runtime_error("weights file: unsupported version " + std::to_string(version));

    DecoderConfig cfg;
    cfg.n_layers = static_cast<int>(detail::read_u32le(is));
    cfg.n_heads = static_cast<int>(detail::read_u32le(is));
    cfg.d_model = static_cast<int>(detail::read_u32le(is));
    cfg.vocab_size = static_cast<int>(detail::read_u32le(is));
    cfg.n_visual_slots = static_cast<int>(detail::read_u32le(is));
    cfg.max_seq = static_cast<int>(detail::read_u32le(is));
    cfg.band_lo = static_cast<int>(detail::read_u32le(is));
    cfg.band_hi = static_cast<int>(detail::read_u32le(is));
    cfg.pad_token = static_cast<int>(detail::read_u32le(is));
    cfg.validate();

    DecoderWeights w;
    w.drift_lambda = detail::read_f64le(is);
    w.embedding = Matrix(cfg.vocab_size, cfg.d_model);
    w.vis_proj = Matrix(cfg.d_model, cfg.d_model);
    detail::read_matrix(is, w.embedding);
    detail::read_matrix(is, w.vis_proj);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.wq = Matrix(cfg.d_model, cfg.d_model);
        l.wk = Matrix(cfg.d_model, cfg.d_model);
        l.wv = Matrix(cfg.d_model, cfg.d_model);
        l.wo = Matrix(cfg.d_model, cfg.d_model);
        l.ff1 = Matrix(4 * cfg.d_model, cfg.d_model);
        l.ff2 = Matrix(cfg.d_model, 4 * cfg.d_model);
        detail::read_matrix(is, l.wq);
        detail::read_matrix(is, l.wk);
        detail::read_matrix(is, l.wv);
        detail::read_matrix(is, l.wo);
        detail::read_matrix(is, l.ff1);
        detail::read_matrix(is, l.ff2);
    }
    w.unembed = Matrix(cfg.vocab_size, cfg.d_model);
    detail::read_matrix(is, w.unembed);
    w.validate(cfg);
    return {cfg, w};
}

}  // namespace cgvlm
