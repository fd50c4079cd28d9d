#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dronetune/errors.hpp"
#include "dronetune/models.hpp"

namespace dronetune {

// Checkpoint container: magic "DTCP", u32le version, u32le config-text
// length + bytes (architecture echo), u32le entry count, then per entry:
// u32le name length + name, u8 kind (0 = parameter, 1 = buffer), u32le ndim,
// ndim × u32le dims, row-major f32le values. Adapter parameters live under
// the "adapter." name prefix, so a base checkpoint plus an adapter
// checkpoint reconstructs an adapted model.

enum class CheckpointFilter { All, BaseOnly, AdapterOnly };

namespace ckpt_detail {

inline bool is_adapter_name(std::string_view name) { return name.starts_with("adapter."); }

inline bool filter_keeps(CheckpointFilter f, std::string_view name) {
    switch (f) {
    case CheckpointFilter::All: return true;
    case CheckpointFilter::BaseOnly: return !is_adapter_name(name);
    default: return is_adapter_name(name);
    }
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

template <typename T>
void write_entry(std::ostream& out, const std::string& name, std::uint8_t kind,
                 const Shape& shape, const std::vector<T>& values) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(kind));
    write_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) write_u32(out, static_cast<std::uint32_t>(d));
    for (T v : values) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

} // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     CheckpointFilter filter = CheckpointFilter::All) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write("DTCP", 4);
    ckpt_detail::write_u32(out, 1);
    std::string cfg = model.architecture();
    ckpt_detail::write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    std::uint32_t count = 0;
    for (const auto& e : model.params().entries())
        if (ckpt_detail::filter_keeps(filter, e.name)) ++count;
    if (filter != CheckpointFilter::AdapterOnly)
        count += static_cast<std::uint32_t>(model.params().buffers().size());
    ckpt_detail::write_u32(out, count);

    for (const auto& e : model.params().entries())
        if (ckpt_detail::filter_keeps(filter, e.name))
            ckpt_detail::write_entry(out, e.name, 0, e.tensor.shape(), e.tensor.values());
    if (filter != CheckpointFilter::AdapterOnly)
        for (const auto& [name, buf] : model.params().buffers())
            ckpt_detail::write_entry(out, name, 1, Shape{buf->size()}, *buf);
    if (!out) throw DataError("short write on checkpoint: " + path.string());
}

/// Loads entries into matching registry slots. Every file entry must exist
/// in the model with a matching shape; model entries absent from the file
/// are left untouched (that is the base + adapter merge).
template <typename T>
void load_checkpoint(const std::filesystem::path& path, Model<T>& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DTCP", 4) != 0)
        throw DataError(path.string() + ": bad checkpoint magic (expected DTCP)");
    std::uint32_t version = ckpt_detail::read_u32(in);
    if (version != 1)
        throw DataError(path.string() + ": unsupported checkpoint version " +
                        std::to_string(version));
    std::uint32_t cfg_len = ckpt_detail::read_u32(in);
    in.seekg(cfg_len, std::ios::cur); // config echo is informational
    std::uint32_t count = ckpt_detail::read_u32(in);

    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = ckpt_detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        int kind = in.get();
        std::uint32_t ndim = ckpt_detail::read_u32(in);
        Shape shape(ndim);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape[d] = ckpt_detail::read_u32(in);
            numel *= shape[d];
        }
        std::vector<float> vals(numel);
        for (auto& v : vals) {
            std::uint32_t bits = ckpt_detail::read_u32(in);
            std::memcpy(&v, &bits, 4);
        }
        if (!in) throw DataError(path.string() + ": truncated checkpoint at entry " + name);

        if (kind == 0) {
            auto* e = model.params().find(name);
            if (!e)
                throw DataError(path.string() + ": checkpoint parameter '" + name +
                                "' not present in model");
            if (e->tensor.shape() != shape)
                throw DataError(path.string() + ": shape mismatch for '" + name + "'");
            auto& dst = e->tensor.values();
            for (std::size_t j = 0; j < numel; ++j) dst[j] = static_cast<T>(vals[j]);
        } else {
            bool found = false;
            for (const auto& [bname, buf] : model.params().buffers()) {
                if (bname != name) continue;
                if (buf->size() != numel)
                    throw DataError(path.string() + ": size mismatch for buffer '" + name + "'");
                for (std::size_t j = 0; j < numel; ++j) (*buf)[j] = static_cast<T>(vals[j]);
                found = true;
                break;
            }
            if (!found)
                throw DataError(path.string() + ": checkpoint buffer '" + name +
                                "' not present in model");
        }
    }
}

} // namespace dronetune
