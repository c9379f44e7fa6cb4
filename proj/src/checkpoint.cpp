// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "hawaii/io.hpp"

namespace hawaii {

namespace {

constexpr std::string_view kMagic = "HKPT1\n";
constexpr std::string_view kMomentFirst = "adam.m.";
constexpr std::string_view kMomentSecond = "adam.v.";
constexpr std::string_view kStep = "adam.step";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void append_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double read_le(const char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_checkpoint(const CheckpointContents& contents) {
    nlohmann::json header = nlohmann::json::object();
    std::string payload;
    for (const auto& [name, arr] : contents) {
        if (shape_numel(arr.shape) != arr.values.size()) {
            throw CheckpointError("checkpoint entry '" + name + "' has inconsistent shape");
        }
        header[name] = {{"shape", arr.shape}, {"offset", payload.size()}, {"dtype", "f64"}};
        for (double v : arr.values) append_le(payload, v);
    }
    std::string out(kMagic);
    out += header.dump();
    out += '\n';
    out += payload;
    return out;
}

CheckpointContents decode_checkpoint(const std::string& bytes) {
    if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw CheckpointError("corrupt header: bad magic bytes");
    const auto nl = bytes.find('\n', kMagic.size());
    if (nl == std::string::npos) throw CheckpointError("corrupt header: missing header terminator");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(kMagic.size()),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(nl));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt header: ") + e.what());
    }
    if (!header.is_object()) throw CheckpointError("corrupt header: expected a JSON object");
    const std::size_t payload_start = nl + 1;
    const std::size_t payload_size = bytes.size() - payload_start;

    CheckpointContents out;
    for (const auto& [name, entry] : header.items()) {
        StoredArray arr;
        std::size_t offset = 0;
        try {
            if (entry.at("dtype").get<std::string>() != "f64") {
                throw CheckpointError("corrupt header: entry '" + name + "' has unsupported dtype");
            }
            arr.shape = entry.at("shape").get<Shape>();
            offset = entry.at("offset").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError("corrupt header: entry '" + name + "': " + e.what());
        }
        const std::size_t count = shape_numel(arr.shape);
        if (offset > payload_size || count * 8 > payload_size - offset) {
            throw CheckpointError("truncated payload: entry '" + name + "' needs bytes [" + std::to_string(offset) +
                                  ", " + std::to_string(offset + count * 8) + ") of " + std::to_string(payload_size));
        }
        arr.values.resize(count);
        const char* p = bytes.data() + payload_start + offset;
        for (std::size_t i = 0; i < count; ++i) arr.values[i] = read_le(p + 8 * i);
        out.emplace(name, std::move(arr));
    }
    return out;
}

void save_checkpoint(const HawaiiModel& model, const OptimizerState& optimizer, const std::filesystem::path& path) {
    CheckpointContents contents;
    for (const auto& p : model.params().params()) contents[p.name] = StoredArray{p.tensor.shape(), p.tensor.to_vector()};
    for (const auto& [name, mom] : optimizer.moments) {
        const Shape shape = model.params().find(name) ? model.params().find(name)->tensor.shape() : Shape{mom.first.size()};
        contents[std::string(kMomentFirst) + name] = StoredArray{shape, mom.first};
        contents[std::string(kMomentSecond) + name] = StoredArray{shape, mom.second};
    }
    contents[std::string(kStep)] = StoredArray{{1}, {static_cast<double>(optimizer.step)}};
    write_file_atomic(path, encode_checkpoint(contents));
}

void load_checkpoint(const std::filesystem::path& path, HawaiiModel& model, OptimizerState& optimizer) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError& e) {
        throw CheckpointError(e.what());
    }
    CheckpointContents contents = decode_checkpoint(bytes);

    auto& params = model.params();
    auto require_param = [&](const std::string& name, const std::string& entry, const Shape& shape) -> const NamedParam& {
        const NamedParam* p = params.find(name);
        if (p == nullptr) throw CheckpointError("unknown parameter '" + entry + "' in checkpoint");
        if (p->tensor.shape() != shape) {
            throw CheckpointError("parameter '" + entry + "' has shape " + shape_to_string(shape) +
                                  " in checkpoint but " + shape_to_string(p->tensor.shape()) + " in model");
        }
        return *p;
    };

    // Model parameters first so a mismatched config is reported by the
    // parameter's own name rather than by one of its optimizer buffers.
    const auto is_optimizer_entry = [](const std::string& name) {
        return name == kStep || name.starts_with(kMomentFirst) || name.starts_with(kMomentSecond);
    };
    for (const auto& [name, arr] : contents)
        if (!is_optimizer_entry(name)) require_param(name, name, arr.shape);

    OptimizerState loaded;
    loaded.settings = optimizer.settings;
    bool have_step = false;
    for (const auto& [name, arr] : contents) {
        if (name == kStep) {
            if (arr.values.size() != 1 || arr.values[0] < 0.0) throw CheckpointError("corrupt optimizer step counter");
            loaded.step = static_cast<std::uint64_t>(arr.values[0]);
            have_step = true;
        } else if (name.starts_with(kMomentFirst)) {
            const std::string pname = name.substr(kMomentFirst.size());
            require_param(pname, name, arr.shape);
            loaded.moments[pname].first = arr.values;
        } else if (name.starts_with(kMomentSecond)) {
            const std::string pname = name.substr(kMomentSecond.size());
            require_param(pname, name, arr.shape);
            loaded.moments[pname].second = arr.values;
        }
    }
    for (const auto& p : params.params()) {
        if (!contents.contains(p.name)) throw CheckpointError("parameter '" + p.name + "' missing from checkpoint");
    }
    for (const auto& [name, mom] : loaded.moments) {
        if (mom.first.empty() || mom.second.empty()) throw CheckpointError("incomplete optimizer state for '" + name + "'");
    }
    if (!have_step) throw CheckpointError("optimizer step counter missing from checkpoint");

    for (auto& p : params.params()) {
        const auto& values = contents.at(p.name).values;
        auto dst = p.tensor.mutable_data();
        std::copy(values.begin(), values.end(), dst.begin());
    }
    optimizer = std::move(loaded);
}

}  // namespace hawaii
