#pragma once

// Tensor checkpoint file:
//
//   bytes 0..7    magic "SWPCKPT1"
//   bytes 8..15   header length H, unsigned 64-bit little-endian
//   next H bytes  UTF-8 JSON header:
//                   {"tensors": [{"name", "shape", "offset"}, ...], "meta": {...}}
//                 offset counts bytes from the start of the data section
//   data section  every tensor's values as IEEE-754 binary64 little-endian,
//                 row-major, in header order

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "switchprompt/encoder.hpp"
#include "switchprompt/tensor.hpp"

namespace switchprompt {

inline constexpr char kCheckpointMagic[8] = {'S', 'W', 'P', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("checkpoint has no tensor '" + name + "'");
        return it->second;
    }
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline std::uint64_t get_u64(const unsigned char* b) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * 8;
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 8);
    detail::put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
        for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw std::runtime_error("short write to checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw std::runtime_error(path + " is not a checkpoint file");
    }
    const std::uint64_t header_len = detail::get_u64(raw + 8);
    if (16 + header_len > bytes.size()) throw std::runtime_error(path + ": truncated header");
    const auto header = nlohmann::json::parse(bytes.substr(16, header_len));
    const std::size_t data_start = 16 + header_len;

    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        const std::uint64_t offset = entry.at("offset");
        const std::size_t n = shape_numel(shape);
        if (data_start + offset + n * 8 > bytes.size()) {
            throw std::runtime_error(path + ": tensor '" + entry.at("name").get<std::string>() + "' runs past end of file");
        }
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) {
            values[i] = std::bit_cast<double>(detail::get_u64(raw + data_start + offset + i * 8));
        }
        ck.tensors.emplace(entry.at("name").get<std::string>(), Tensor::from_values(std::move(shape), std::move(values)));
    }
    return ck;
}

inline nlohmann::json to_json(const EncoderConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},     {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},   {"ffn_dim", c.ffn_dim},         {"max_seq_len", c.max_seq_len},
            {"dropout_rate", c.dropout_rate}, {"activation", to_string(c.activation)}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size");
    c.embed_dim = j.at("embed_dim");
    c.num_layers = j.at("num_layers");
    c.num_heads = j.at("num_heads");
    c.ffn_dim = j.at("ffn_dim");
    c.max_seq_len = j.at("max_seq_len");
    c.dropout_rate = j.at("dropout_rate");
    c.activation = parse_activation(j.at("activation"));
    c.validate();
    return c;
}

/// Backbone weights plus the vocabulary they were trained with.
inline void save_backbone(const std::string& path, const EncoderWeights& weights, const Vocabulary& vocab) {
    save_checkpoint(path, weights.named_tensors(),
                    {{"kind", "backbone"}, {"encoder", to_json(weights.config)}, {"vocab", vocab.id_to_word()}});
}

inline std::pair<EncoderWeights, Vocabulary> load_backbone(const std::string& path) {
    const auto ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "backbone") throw std::runtime_error(path + " is not a backbone checkpoint");
    const EncoderConfig cfg = encoder_config_from_json(ck.meta.at("encoder"));
    EncoderWeights w = EncoderWeights::random(cfg, 0);
    auto assign = [&](Tensor& t, const std::string& name) {
        const Tensor& src = ck.at(name);
        if (src.shape() != t.shape()) {
            throw std::runtime_error(path + ": tensor '" + name + "' has shape " + shape_str(src.shape()) +
                                     ", expected " + shape_str(t.shape()));
        }
        auto dst = t.mutable_values();
        std::copy(src.values().begin(), src.values().end(), dst.begin());
    };
    for (auto& [name, t] : w.named_tensors()) {
        Tensor handle = t;
        assign(handle, name);
    }
    auto vocab = Vocabulary::from_id_order(ck.meta.at("vocab").get<std::vector<std::string>>());
    if (vocab.size() > cfg.vocab_size) throw std::runtime_error(path + ": vocabulary larger than embedding table");
    return {std::move(w), std::move(vocab)};
}

}  // namespace switchprompt
