#include "segdt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "segdt/errors.hpp"
#include "segdt/rng.hpp"

namespace segdt {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

class Reader {
public:
    Reader(const std::string& path, const char* who) : who_(who), path_(path) {
        std::ifstream f(path, std::ios::binary);
        if (!f)
            throw CheckpointError(CheckpointError::Kind::io,
                                  std::string(who) + ": cannot open " + path);
        bytes_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
        if (f.bad())
            throw CheckpointError(CheckpointError::Kind::io,
                                  std::string(who) + ": read failure on " + path);
    }

    void need(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size())
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  std::string(who_) + ": truncated " + what + " in " + path_);
    }

    void raw(void* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = std::uint16_t(bytes_[pos_]) | (std::uint16_t(bytes_[pos_ + 1]) << 8);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64(const char* what) {
        std::uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }
    const std::string& path() const { return path_; }
    const char* who() const { return who_; }

private:
    const char* who_;
    std::string path_;
    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

void check_magic(Reader& r, const char expect[4]) {
    char magic[4];
    try {
        r.raw(magic, 4, "magic");
    } catch (const CheckpointError&) {
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              std::string(r.who()) + ": bad magic in " + r.path());
    }
    if (std::memcmp(magic, expect, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              std::string(r.who()) + ": bad magic in " + r.path() +
                                  " (expected " + std::string(expect, 4) + ")");
}

void check_version(Reader& r) {
    std::uint32_t v = r.u32("version");
    if (v != kVersion)
        throw CheckpointError(CheckpointError::Kind::unsupported_version,
                              std::string(r.who()) + ": unsupported version " +
                                  std::to_string(v) + " in " + r.path());
}

void write_tensor_table(std::vector<unsigned char>& out, NamedParams<float>& params) {
    put_u32(out, std::uint32_t(params.size()));
    for (auto& [name, p] : params) {
        put_u16(out, std::uint16_t(name.size()));
        put_bytes(out, name.data(), name.size());
        const Shape& s = p.shape();
        put_u32(out, std::uint32_t(s.size()));
        for (std::size_t d : s) put_u64(out, d);
        for (float v : p.values()) put_f32(out, v);
    }
}

void read_tensor_table_into(Reader& r, NamedParams<float>& params) {
    std::uint32_t count = r.u32("tensor count");
    if (count != params.size())
        throw CheckpointError(CheckpointError::Kind::name_mismatch,
                              std::string(r.who()) + ": file holds " + std::to_string(count) +
                                  " tensors, model expects " + std::to_string(params.size()));
    for (auto& [name, p] : params) {
        std::uint16_t len = r.u16("tensor name length");
        std::string fname = r.str(len, "tensor name");
        if (fname != name)
            throw CheckpointError(CheckpointError::Kind::name_mismatch,
                                  std::string(r.who()) + ": tensor '" + fname +
                                      "' where '" + name + "' expected");
        std::uint32_t ndim = r.u32("tensor rank");
        Shape s(ndim);
        for (auto& d : s) d = r.u64("tensor dims");
        if (s != p.shape())
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  std::string(r.who()) + ": tensor '" + name + "' has shape " +
                                      shape_str(s) + ", model expects " + shape_str(p.shape()));
        try {
            r.need(p.numel() * 4, "tensor payload");
        } catch (const CheckpointError&) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  std::string(r.who()) + ": truncated tensor payload for '" +
                                      name + "' in " + r.path());
        }
        for (std::size_t i = 0; i < p.numel(); ++i) {
            std::uint32_t bits = r.u32("tensor payload");
            std::memcpy(&p.values()[i], &bits, 4);
        }
    }
    if (!r.at_end())
        throw CheckpointError(CheckpointError::Kind::trailing_data,
                              std::string(r.who()) + ": trailing data after last tensor in " +
                                  r.path());
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes,
                const char* who) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw CheckpointError(CheckpointError::Kind::io,
                              std::string(who) + ": cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
    if (!f)
        throw CheckpointError(CheckpointError::Kind::io,
                              std::string(who) + ": write failure on " + path);
}

DiTConfig read_dit_config(Reader& r) {
    DiTConfig cfg;
    cfg.latent_channels = r.u32("config");
    cfg.latent_h = r.u32("config");
    cfg.latent_w = r.u32("config");
    cfg.patch = r.u32("config");
    cfg.hidden = r.u32("config");
    cfg.depth = r.u32("config");
    cfg.heads = r.u32("config");
    cfg.mlp_ratio = r.u32("config");
    cfg.time_freq = r.u32("config");
    cfg.drop_path = r.f64("config");
    return cfg;
}

} // namespace

void save_model_checkpoint(const std::string& path, const DiTConfig& cfg,
                           DiTParams<float>& params, std::uint64_t seed, std::uint32_t epoch) {
    std::vector<unsigned char> out;
    put_bytes(out, "SGDT", 4);
    put_u32(out, kVersion);
    for (std::size_t v : {cfg.latent_channels, cfg.latent_h, cfg.latent_w, cfg.patch, cfg.hidden,
                          cfg.depth, cfg.heads, cfg.mlp_ratio, cfg.time_freq})
        put_u32(out, std::uint32_t(v));
    put_f64(out, cfg.drop_path);
    put_u64(out, seed);
    put_u32(out, epoch);
    NamedParams<float> named = params.named();
    write_tensor_table(out, named);
    write_file(path, out, "save_model_checkpoint");
}

ModelCheckpointMeta peek_model_checkpoint(const std::string& path) {
    Reader r(path, "load_model_checkpoint");
    check_magic(r, "SGDT");
    check_version(r);
    ModelCheckpointMeta meta;
    meta.config = read_dit_config(r);
    meta.seed = r.u64("seed");
    meta.epoch = r.u32("epoch");
    return meta;
}

ModelCheckpointMeta load_model_checkpoint(const std::string& path, DiTParams<float>& params) {
    Reader r(path, "load_model_checkpoint");
    check_magic(r, "SGDT");
    check_version(r);
    ModelCheckpointMeta meta;
    meta.config = read_dit_config(r);
    meta.seed = r.u64("seed");
    meta.epoch = r.u32("epoch");
    NamedParams<float> named = params.named();
    read_tensor_table_into(r, named);
    return meta;
}

void save_codec_checkpoint(const std::string& path, Codec<float>& codec) {
    std::vector<unsigned char> out;
    put_bytes(out, "SGCD", 4);
    put_u32(out, kVersion);
    const CodecConfig& cfg = codec.config();
    for (std::size_t v : {cfg.in_channels, cfg.latent_channels, cfg.downsample, cfg.base_width})
        put_u32(out, std::uint32_t(v));
    put_u32(out, std::uint32_t(codec.kind()));
    NamedParams<float> named = codec.named();
    write_tensor_table(out, named);
    write_file(path, out, "save_codec_checkpoint");
}

std::unique_ptr<Codec<float>> load_codec_checkpoint(const std::string& path) {
    Reader r(path, "load_codec_checkpoint");
    check_magic(r, "SGCD");
    check_version(r);
    CodecConfig cfg;
    cfg.in_channels = r.u32("config");
    cfg.latent_channels = r.u32("config");
    cfg.downsample = r.u32("config");
    cfg.base_width = r.u32("config");
    std::uint32_t kind = r.u32("codec kind");
    std::unique_ptr<Codec<float>> codec;
    if (kind == std::uint32_t(CodecKind::passthrough)) {
        codec = std::make_unique<PassthroughCodec<float>>(cfg);
    } else if (kind == std::uint32_t(CodecKind::conv)) {
        Rng scratch(0);  // values are overwritten by the tensor table
        codec = std::make_unique<ConvCodec<float>>(cfg, scratch);
    } else {
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              "load_codec_checkpoint: unknown codec kind " +
                                  std::to_string(kind) + " in " + path);
    }
    NamedParams<float> named = codec->named();
    read_tensor_table_into(r, named);
    return codec;
}

} // namespace segdt
