// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/trace.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace moesim {

using nlohmann::json;

namespace {

bool is_gzip_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::string where(const std::string& request_id, std::size_t token, std::size_t layer) {
    std::ostringstream os;
    os << "request '" << request_id << "' token " << token << " layer " << layer;
    return os.str();
}

}  // namespace

void ModelSpec::validate() const {
    if (num_experts < 1) throw ConfigError("model: num_experts must be >= 1");
    if (top_k < 1) throw ConfigError("model: top_k must be >= 1");
    if (top_k > num_experts) throw ConfigError("model: top_k must be <= num_experts");
    if (moe_layer_ids.empty()) throw ConfigError("model: moe_layer_ids must not be empty");
    for (std::size_t i = 0; i < moe_layer_ids.size(); ++i) {
        if (moe_layer_ids[i] >= num_layers)
            throw ConfigError("model: moe_layer_ids entry " + std::to_string(moe_layer_ids[i]) +
                              " outside [0, num_layers)");
        if (i > 0 && moe_layer_ids[i] <= moe_layer_ids[i - 1])
            throw ConfigError("model: moe_layer_ids must be strictly increasing");
    }
    if (slices_per_expert < 1) throw ConfigError("model: slices_per_expert must be >= 1");
    if (expert_bytes % slices_per_expert != 0)
        throw ConfigError("model: expert_bytes must be divisible by slices_per_expert");
    if (!(flops_per_token_per_expert >= 0.0)) throw ConfigError("model: flops_per_token_per_expert must be >= 0");
}

void to_json(json& j, const ModelSpec& m) {
    j = json{{"name", m.name},
             {"num_layers", m.num_layers},
             {"moe_layer_ids", m.moe_layer_ids},
             {"num_experts", m.num_experts},
             {"top_k", m.top_k},
             {"expert_bytes", m.expert_bytes},
             {"slices_per_expert", m.slices_per_expert},
             {"activation_bytes", m.activation_bytes},
             {"flops_per_token_per_expert", m.flops_per_token_per_expert}};
}

void from_json(const json& j, ModelSpec& m) {
    ModelSpec d;
    m.name = j.value("name", d.name);
    m.num_layers = j.value("num_layers", d.num_layers);
    if (j.contains("moe_layer_ids")) {
        m.moe_layer_ids = j.at("moe_layer_ids").get<std::vector<std::uint32_t>>();
    } else {
        m.moe_layer_ids.resize(m.num_layers);
        for (std::uint32_t i = 0; i < m.num_layers; ++i) m.moe_layer_ids[i] = i;
    }
    m.num_experts = j.value("num_experts", d.num_experts);
    m.top_k = j.value("top_k", d.top_k);
    m.expert_bytes = j.value("expert_bytes", d.expert_bytes);
    m.slices_per_expert = j.value("slices_per_expert", d.slices_per_expert);
    m.activation_bytes = j.value("activation_bytes", d.activation_bytes);
    m.flops_per_token_per_expert = j.value("flops_per_token_per_expert", d.flops_per_token_per_expert);
}

std::size_t RequestTrace::prefill_count() const {
    return static_cast<std::size_t>(
        std::count_if(tokens.begin(), tokens.end(), [](const TokenStep& t) { return t.phase == Phase::prefill; }));
}

std::optional<std::size_t> RequestTrace::decode_index(std::size_t step) const {
    const std::size_t idx = prefill_count() + step;
    if (idx >= tokens.size()) return std::nullopt;
    return idx;
}

std::size_t TraceSet::token_count() const {
    std::size_t n = 0;
    for (const auto& r : requests) n += r.tokens.size();
    return n;
}

void canonicalize_and_validate(RequestTrace& r, const ModelSpec& m) {
    bool seen_decode = false;
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        auto& tok = r.tokens[t];
        if (tok.phase == Phase::decode) seen_decode = true;
        else if (seen_decode)
            throw DataError("request '" + r.request_id + "' token " + std::to_string(t) +
                            ": prefill token after decode token");
        if (tok.selections.size() != m.num_moe_layers())
            throw DataError("request '" + r.request_id + "' token " + std::to_string(t) + ": expected " +
                            std::to_string(m.num_moe_layers()) + " MoE layers, got " +
                            std::to_string(tok.selections.size()));
        for (std::size_t l = 0; l < tok.selections.size(); ++l) {
            auto& sel = tok.selections[l];
            if (sel.size() != m.top_k)
                throw DataError(where(r.request_id, t, l) + ": expected " + std::to_string(m.top_k) +
                                " experts, got " + std::to_string(sel.size()));
            std::sort(sel.begin(), sel.end());
            if (std::adjacent_find(sel.begin(), sel.end()) != sel.end())
                throw DataError(where(r.request_id, t, l) + ": duplicate expert id");
            if (sel.back() >= m.num_experts)
                throw DataError(where(r.request_id, t, l) + ": expert id " + std::to_string(sel.back()) +
                                " out of range [0, " + std::to_string(m.num_experts) + ")");
        }
    }
}

RequestTrace canonical_record_adapter(const json& record, const ModelSpec& model) {
    if (!record.is_object()) throw DataError("record is not a JSON object");
    RequestTrace r;
    if (!record.contains("request_id") || !record["request_id"].is_string())
        throw DataError("record missing string field 'request_id'");
    r.request_id = record["request_id"].get<std::string>();
    if (record.contains("tags")) {
        for (const auto& [k, v] : record["tags"].items()) {
            if (!v.is_string()) throw DataError("request '" + r.request_id + "': tag '" + k + "' is not a string");
            r.tags[k] = v.get<std::string>();
        }
    }
    auto read_phase = [&](const char* key, Phase phase) {
        if (!record.contains(key))
            throw DataError("request '" + r.request_id + "': missing field '" + key + "'");
        const auto& toks = record[key];
        if (!toks.is_array()) throw DataError("request '" + r.request_id + "': '" + key + "' is not an array");
        for (const auto& tok : toks) {
            const std::size_t t = r.tokens.size();
            if (!tok.is_array())
                throw DataError("request '" + r.request_id + "' token " + std::to_string(t) + ": not an array");
            TokenStep step;
            step.phase = phase;
            step.selections.reserve(tok.size());
            for (std::size_t l = 0; l < tok.size(); ++l) {
                const auto& sel = tok[l];
                if (!sel.is_array()) throw DataError(where(r.request_id, t, l) + ": selection is not an array");
                std::vector<ExpertId> ids;
                ids.reserve(sel.size());
                for (const auto& id : sel) {
                    if (!id.is_number_integer() || id.get<std::int64_t>() < 0)
                        throw DataError(where(r.request_id, t, l) + ": expert id is not a non-negative integer");
                    ids.push_back(static_cast<ExpertId>(id.get<std::int64_t>()));
                }
                step.selections.push_back(std::move(ids));
            }
            r.tokens.push_back(std::move(step));
        }
    };
    read_phase("prefill", Phase::prefill);
    read_phase("decode", Phase::decode);
    (void)model;
    return r;
}

struct TraceReader::Impl {
    gzFile file = nullptr;
    std::string line;

    ~Impl() {
        if (file) gzclose(file);
    }

    bool getline() {
        line.clear();
        char buf[1 << 16];
        while (gzgets(file, buf, sizeof(buf)) != nullptr) {
            line.append(buf);
            if (!line.empty() && line.back() == '\n') {
                line.pop_back();
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return true;
            }
        }
        int err = 0;
        const char* msg = gzerror(file, &err);
        if (err != Z_OK && err != Z_STREAM_END) throw DataError(std::string("read error: ") + msg);
        return !line.empty();
    }
};

TraceReader::TraceReader(const std::filesystem::path& path, std::optional<ModelSpec> expected, LoadOptions options)
    : impl_(std::make_unique<Impl>()), options_(std::move(options)) {
    impl_->file = gzopen(path.string().c_str(), "rb");
    if (!impl_->file) throw DataError("cannot open trace file " + path.string());
    gzbuffer(impl_->file, 1 << 17);

    while (impl_->getline()) {
        ++line_no_;
        if (!impl_->line.empty()) break;
    }
    if (impl_->line.empty()) throw DataError(path.string() + ": missing model header line");
    json header;
    try {
        header = json::parse(impl_->line);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": header is not valid JSON: " + e.what());
    }
    if (!header.is_object() || !header.contains("model"))
        throw DataError(path.string() + ": first line must be {\"model\": {...}}");
    try {
        model_ = header["model"].get<ModelSpec>();
        model_.validate();
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad model header: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": bad model header: " + e.what());
    }
    if (expected) {
        if (expected->num_experts != model_.num_experts || expected->top_k != model_.top_k ||
            expected->moe_layer_ids.size() != model_.moe_layer_ids.size())
            throw DataError(path.string() + ": trace model (E=" + std::to_string(model_.num_experts) +
                            ", top_k=" + std::to_string(model_.top_k) + ", moe_layers=" +
                            std::to_string(model_.moe_layer_ids.size()) + ") does not match the requested model");
        model_ = *expected;
    }
}

TraceReader::~TraceReader() = default;
TraceReader::TraceReader(TraceReader&&) noexcept = default;
TraceReader& TraceReader::operator=(TraceReader&&) noexcept = default;

std::optional<RequestTrace> TraceReader::next() {
    while (impl_->getline()) {
        ++line_no_;
        if (impl_->line.empty()) continue;
        try {
            RequestTrace r;
            try {
                r = options_.adapter(json::parse(impl_->line), model_);
            } catch (const json::exception& e) {
                throw DataError(std::string("malformed JSON: ") + e.what());
            }
            canonicalize_and_validate(r, model_);
            return r;
        } catch (const DataError& e) {
            std::string msg = "line " + std::to_string(line_no_) + ": " + e.what();
            if (options_.strict) throw DataError(msg);
            skipped_.push_back(std::move(msg));
        }
    }
    return std::nullopt;
}

namespace {

LoadedTraces drain(TraceReader& reader) {
    LoadedTraces out;
    out.traces.model = reader.model();
    while (auto r = reader.next()) out.traces.requests.push_back(std::move(*r));
    out.skipped = reader.skipped();
    return out;
}

}  // namespace

LoadedTraces load_traces(const std::filesystem::path& path, const ModelSpec& spec, LoadOptions options) {
    spec.validate();
    TraceReader reader(path, spec, std::move(options));
    return drain(reader);
}

LoadedTraces load_traces(const std::filesystem::path& path, LoadOptions options) {
    TraceReader reader(path, std::nullopt, std::move(options));
    return drain(reader);
}

namespace {

json request_to_json(const RequestTrace& r) {
    json pre = json::array();
    json dec = json::array();
    for (const auto& tok : r.tokens) {
        json layers = json::array();
        for (auto sel : tok.selections) {
            std::sort(sel.begin(), sel.end());
            layers.push_back(std::move(sel));
        }
        (tok.phase == Phase::prefill ? pre : dec).push_back(std::move(layers));
    }
    json tags = json::object();
    for (const auto& [k, v] : r.tags) tags[k] = v;
    return json{{"request_id", r.request_id}, {"tags", std::move(tags)}, {"prefill", std::move(pre)},
                {"decode", std::move(dec)}};
}

class LineSink {
   public:
    explicit LineSink(const std::filesystem::path& path) : path_(path) {
        if (is_gzip_path(path)) {
            // "wb6": deterministic output; no timestamps are written by gzopen.
            gz_ = gzopen(path.string().c_str(), "wb6");
            if (!gz_) throw DataError("cannot open " + path.string() + " for writing");
        } else {
            out_.open(path, std::ios::binary | std::ios::trunc);
            if (!out_) throw DataError("cannot open " + path.string() + " for writing");
        }
    }
    ~LineSink() {
        if (gz_) gzclose(gz_);
    }
    LineSink(const LineSink&) = delete;
    LineSink& operator=(const LineSink&) = delete;

    void write(const std::string& s) {
        if (gz_) {
            if (gzwrite(gz_, s.data(), static_cast<unsigned>(s.size())) != static_cast<int>(s.size()) ||
                gzputc(gz_, '\n') != '\n')
                throw DataError("write failed: " + path_.string());
        } else {
            out_ << s << '\n';
            if (!out_) throw DataError("write failed: " + path_.string());
        }
    }

    void close() {
        if (gz_) {
            const int rc = gzclose(gz_);
            gz_ = nullptr;
            if (rc != Z_OK) throw DataError("close failed: " + path_.string());
        } else {
            out_.close();
            if (!out_) throw DataError("close failed: " + path_.string());
        }
    }

   private:
    std::filesystem::path path_;
    gzFile gz_ = nullptr;
    std::ofstream out_;
};

}  // namespace

void save_traces(const TraceSet& ts, const std::filesystem::path& path, const json* provenance) {
    LineSink sink(path);
    json header{{"model", ts.model}};
    if (provenance) header["provenance"] = *provenance;
    sink.write(header.dump());
    for (const auto& r : ts.requests) sink.write(request_to_json(r).dump());
    sink.close();
}

TraceSet filter_by_tag(const TraceSet& ts, const std::string& key, const std::string& value) {
    TraceSet out;
    out.model = ts.model;
    for (const auto& r : ts.requests) {
        auto it = r.tags.find(key);
        if (it != r.tags.end() && it->second == value) out.requests.push_back(r);
    }
    return out;
}

}  // namespace moesim
