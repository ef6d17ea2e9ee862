#include "sti/types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "sti/shard_store.hpp"

namespace sti {

using nlohmann::json;

std::string to_string(const Violation& v) {
    std::ostringstream os;
    switch (v.kind) {
        case ViolationKind::MissingShard:
            os << "MissingShard(" << v.id.layer << "," << v.id.slice << "," << v.bitwidth << ")";
            break;
        case ViolationKind::CorruptShard:
            os << "CorruptShard(" << v.id.layer << "," << v.id.slice << "," << v.bitwidth << ")";
            break;
        case ViolationKind::NonIntegralHeadSize: os << "NonIntegralHeadSize"; break;
        case ViolationKind::NonIntegralFfnSlice: os << "NonIntegralFfnSlice"; break;
        case ViolationKind::BadBitwidths: os << "BadBitwidths"; break;
        case ViolationKind::BadGeometry: os << "BadGeometry"; break;
    }
    if (!v.detail.empty()) os << ": " << v.detail;
    return os.str();
}

std::vector<Violation> validate_manifest_fields(const ModelManifest& m) {
    std::vector<Violation> out;
    if (m.n_layers < 1 || m.n_slices < 1 || m.hidden_dim < 1 || m.ffn_dim < 1) {
        out.push_back({ViolationKind::BadGeometry, {}, 0, "dimensions must be positive"});
        return out;
    }
    if (m.hidden_dim % m.n_slices != 0)
        out.push_back({ViolationKind::NonIntegralHeadSize, {}, 0,
                       std::to_string(m.hidden_dim) + " not divisible by " + std::to_string(m.n_slices)});
    if (m.ffn_dim % m.n_slices != 0)
        out.push_back({ViolationKind::NonIntegralFfnSlice, {}, 0,
                       std::to_string(m.ffn_dim) + " not divisible by " + std::to_string(m.n_slices)});
    if (m.bitwidths.empty() || !std::is_sorted(m.bitwidths.begin(), m.bitwidths.end()) ||
        std::adjacent_find(m.bitwidths.begin(), m.bitwidths.end()) != m.bitwidths.end()) {
        out.push_back({ViolationKind::BadBitwidths, {}, 0, "bitwidths must be sorted ascending, unique"});
    } else {
        for (int k : m.bitwidths) {
            if (k != kFullFidelityBits && (k < 1 || k > 16))
                out.push_back({ViolationKind::BadBitwidths, {}, k,
                               "compressed bitwidth out of 1..16: " + std::to_string(k)});
        }
    }
    return out;
}

std::vector<Violation> validate_manifest(const ModelManifest& m) {
    std::vector<Violation> out = validate_manifest_fields(m);
    if (!out.empty()) return out;

    std::error_code ec;
    auto root = m.root();
    if (!std::filesystem::is_directory(root, ec) || ec)
        throw IoError("shard directory unreadable: " + root.string());

    for (int layer = 0; layer < m.n_layers; ++layer) {
        for (int slice = 0; slice < m.n_slices; ++slice) {
            for (int k : m.bitwidths) {
                auto path = shard_path(m, {layer, slice}, k);
                if (!std::filesystem::exists(path, ec) || ec) {
                    out.push_back({ViolationKind::MissingShard, {layer, slice}, k, path.string()});
                    continue;
                }
                std::string why;
                if (!check_shard_header(path, m, {layer, slice}, k, &why))
                    out.push_back({ViolationKind::CorruptShard, {layer, slice}, k, why});
            }
        }
    }
    return out;
}

Micros HardwareProfile::io(int bitwidth) const {
    auto it = io_delay.find(bitwidth);
    if (it == io_delay.end())
        throw ProfileIncompleteError("no io delay for bitwidth " + std::to_string(bitwidth));
    return it->second;
}

Micros HardwareProfile::compute(int input_len, int width, const std::string& freq) const {
    auto it = compute_delay.find({input_len, width, freq});
    if (it == compute_delay.end())
        throw ProfileIncompleteError("no compute delay for (l=" + std::to_string(input_len) +
                                     ", m=" + std::to_string(width) + ", freq=" + freq + ")");
    return it->second;
}

bool HardwareProfile::has_compute(int input_len, int width, const std::string& freq) const {
    return compute_delay.count({input_len, width, freq}) > 0;
}

std::vector<std::string> HardwareProfile::check_monotonicity() const {
    std::vector<std::string> warnings;
    Micros prev = -1;
    int prev_k = 0;
    Micros widest_compressed = -1;
    for (auto& [k, us] : io_delay) {
        if (k == kFullFidelityBits) continue;
        if (prev >= 0 && us <= prev)
            warnings.push_back("io_delay not strictly increasing: k=" + std::to_string(prev_k) +
                               " -> k=" + std::to_string(k));
        prev = us;
        prev_k = k;
        widest_compressed = us;
    }
    if (auto it = io_delay.find(kFullFidelityBits);
        it != io_delay.end() && widest_compressed >= 0 && it->second <= widest_compressed)
        warnings.push_back("io_delay(32) not above widest compressed width");

    // group compute keys by (l, freq)
    std::map<std::pair<int, std::string>, std::vector<std::pair<int, Micros>>> groups;
    for (auto& [key, us] : compute_delay)
        groups[{key.input_len, key.freq}].push_back({key.width, us});
    for (auto& [lf, entries] : groups) {
        for (std::size_t i = 1; i < entries.size(); ++i) {
            if (entries[i].second < entries[i - 1].second)
                warnings.push_back("compute_delay decreasing in m at l=" + std::to_string(lf.first) +
                                   " freq=" + lf.second + " m=" + std::to_string(entries[i].first));
        }
    }
    return warnings;
}

double ImportanceMap::at(ShardId id) const {
    auto it = score.find(id);
    if (it == score.end())
        throw Error("importance map has no score for shard (" + std::to_string(id.layer) + "," +
                    std::to_string(id.slice) + ")");
    return it->second;
}

bool ImportanceMap::covers(const ModelManifest& manifest, std::string* why) const {
    for (int layer = 0; layer < manifest.n_layers; ++layer) {
        for (int slice = 0; slice < manifest.n_slices; ++slice) {
            auto it = score.find({layer, slice});
            if (it == score.end()) {
                if (why) *why = "missing score for (" + std::to_string(layer) + "," + std::to_string(slice) + ")";
                return false;
            }
            if (!std::isfinite(it->second)) {
                if (why) *why = "non-finite score at (" + std::to_string(layer) + "," + std::to_string(slice) + ")";
                return false;
            }
        }
    }
    if (score.size() != static_cast<std::size_t>(manifest.n_layers) * manifest.n_slices) {
        if (why) *why = "extra scores beyond manifest";
        return false;
    }
    return true;
}

bool ExecutionPlan::is_preloaded(ShardId id) const {
    for (const auto& p : preloaded)
        if (p.id == id) return true;
    return false;
}

std::vector<std::string> validate_plan(const ExecutionPlan& plan) {
    std::vector<std::string> out;
    if (plan.shape.depth < 1 || plan.shape.width < 1) out.push_back("empty shape");
    if (plan.assignment.size() != static_cast<std::size_t>(plan.shape.positions()))
        out.push_back("assignment does not cover every position");
    for (const auto& p : plan.preloaded) {
        if (!plan.shape.contains(p.id)) {
            out.push_back("preloaded shard outside shape");
            continue;
        }
        if (plan.at(p.id.layer, p.id.slice) != p.bitwidth)
            out.push_back("preloaded bitwidth differs from assignment");
    }
    if (plan.ledger.budgets.size() != static_cast<std::size_t>(plan.shape.depth))
        out.push_back("ledger length != depth");
    if (!plan.degraded && !plan.ledger.valid()) out.push_back("negative budget in non-degraded plan");
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json manifest_to_json(const ModelManifest& m) {
    return json{{"n_layers", m.n_layers},
                {"n_slices", m.n_slices},
                {"bitwidths", m.bitwidths},
                {"hidden_dim", m.hidden_dim},
                {"ffn_dim", m.ffn_dim},
                {"task_id", m.task_id},
                {"shard_dir", m.shard_dir},
                {"layer_misc_bytes", m.layer_misc_bytes}};
}

ModelManifest manifest_from(const json& j) {
    ModelManifest m;
    m.n_layers = j.at("n_layers").get<int>();
    m.n_slices = j.at("n_slices").get<int>();
    m.bitwidths = j.at("bitwidths").get<std::vector<int>>();
    m.hidden_dim = j.at("hidden_dim").get<int>();
    m.ffn_dim = j.at("ffn_dim").get<int>();
    m.task_id = j.at("task_id").get<std::string>();
    m.shard_dir = j.at("shard_dir").get<std::string>();
    m.layer_misc_bytes = j.at("layer_misc_bytes").get<std::uint64_t>();
    return m;
}

json profile_to_json(const HardwareProfile& p) {
    json io = json::array();
    for (auto& [k, us] : p.io_delay) io.push_back({{"k", k}, {"ms", us_to_ms(us)}});
    json comp = json::array();
    for (auto& [key, us] : p.compute_delay)
        comp.push_back({{"l", key.input_len}, {"m", key.width}, {"freq", key.freq}, {"ms", us_to_ms(us)}});
    json samples = json::object();
    for (auto& [k, v] : p.io_samples_ms) samples[std::to_string(k)] = v;
    return json{{"io_delay", io}, {"compute_delay", comp}, {"freq_tags", p.freq_tags},
                {"io_samples_ms", samples}};
}

HardwareProfile profile_from(const json& j) {
    HardwareProfile p;
    p.freq_tags = j.at("freq_tags").get<std::vector<std::string>>();
    for (auto& e : j.at("io_delay"))
        p.io_delay[e.at("k").get<int>()] = ms_to_us(e.at("ms").get<double>());
    for (auto& e : j.at("compute_delay"))
        p.compute_delay[{e.at("l").get<int>(), e.at("m").get<int>(), e.at("freq").get<std::string>()}] =
            ms_to_us(e.at("ms").get<double>());
    if (j.contains("io_samples_ms"))
        for (auto& [k, v] : j.at("io_samples_ms").items())
            p.io_samples_ms[std::stoi(k)] = v.get<std::vector<double>>();
    return p;
}

json importance_to_json(const ImportanceMap& im) {
    json scores = json::array();
    for (auto& [id, s] : im.score)
        scores.push_back({{"layer", id.layer}, {"slice", id.slice}, {"score", s}});
    return json{{"metric_name", im.metric_name}, {"baseline_metric", im.baseline_metric},
                {"evaluator", im.evaluator_id}, {"seed", im.seed}, {"scores", scores}};
}

ImportanceMap importance_from(const json& j) {
    ImportanceMap im;
    im.metric_name = j.at("metric_name").get<std::string>();
    im.baseline_metric = j.at("baseline_metric").get<double>();
    im.evaluator_id = j.at("evaluator").get<std::string>();
    im.seed = j.at("seed").get<std::uint64_t>();
    for (auto& e : j.at("scores"))
        im.score[{e.at("layer").get<int>(), e.at("slice").get<int>()}] = e.at("score").get<double>();
    return im;
}

json plan_to_json(const ExecutionPlan& p) {
    json rows = json::array();
    for (int layer = 0; layer < p.shape.depth; ++layer) {
        json row = json::array();
        for (int slice = 0; slice < p.shape.width; ++slice) row.push_back(p.at(layer, slice));
        rows.push_back(row);
    }
    json pre = json::array();
    for (auto& s : p.preloaded)
        pre.push_back({{"layer", s.id.layer}, {"slice", s.id.slice}, {"k", s.bitwidth}});
    return json{{"shape", {{"depth", p.shape.depth}, {"width", p.shape.width}}},
                {"assignment", rows},
                {"preloaded", pre},
                {"ledger_us", p.ledger.budgets},
                {"target_latency_ms", us_to_ms(p.target_latency)},
                {"input_len", p.input_len},
                {"freq", p.freq},
                {"degraded", p.degraded},
                {"provenance",
                 {{"profile", p.profile_hash}, {"importance", p.importance_hash}, {"manifest", p.manifest_hash}}}};
}

ExecutionPlan plan_from(const json& j) {
    ExecutionPlan p;
    p.shape.depth = j.at("shape").at("depth").get<int>();
    p.shape.width = j.at("shape").at("width").get<int>();
    for (auto& row : j.at("assignment"))
        for (auto& k : row) p.assignment.push_back(k.get<int>());
    for (auto& e : j.at("preloaded"))
        p.preloaded.push_back({{e.at("layer").get<int>(), e.at("slice").get<int>()}, e.at("k").get<int>()});
    p.ledger.budgets = j.at("ledger_us").get<std::vector<Micros>>();
    p.target_latency = ms_to_us(j.at("target_latency_ms").get<double>());
    p.input_len = j.at("input_len").get<int>();
    p.freq = j.at("freq").get<std::string>();
    p.degraded = j.at("degraded").get<bool>();
    auto& prov = j.at("provenance");
    p.profile_hash = prov.at("profile").get<std::string>();
    p.importance_hash = prov.at("importance").get<std::string>();
    p.manifest_hash = prov.at("manifest").get<std::string>();
    return p;
}

}  // namespace

std::string to_json_string(const ModelManifest& m) { return manifest_to_json(m).dump(2) + "\n"; }
std::string to_json_string(const HardwareProfile& p) { return profile_to_json(p).dump(2) + "\n"; }
std::string to_json_string(const ImportanceMap& im) { return importance_to_json(im).dump(2) + "\n"; }
std::string to_json_string(const ExecutionPlan& p) { return plan_to_json(p).dump(2) + "\n"; }

ModelManifest manifest_from_json(const std::string& text) { return manifest_from(json::parse(text)); }
HardwareProfile profile_from_json(const std::string& text) { return profile_from(json::parse(text)); }
ImportanceMap importance_from_json(const std::string& text) { return importance_from(json::parse(text)); }
ExecutionPlan plan_from_json(const std::string& text) { return plan_from(json::parse(text)); }

std::string read_text_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::filesystem::path& file, const std::string& text) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
    if (!out) throw IoError("short write to " + file.string());
}

ModelManifest load_manifest(const std::filesystem::path& file) {
    ModelManifest m = manifest_from_json(read_text_file(file));
    m.base_dir = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
    return m;
}

void save_manifest(const ModelManifest& m, const std::filesystem::path& file) {
    write_text_file(file, to_json_string(m));
}

HardwareProfile load_profile(const std::filesystem::path& file) {
    return profile_from_json(read_text_file(file));
}
void save_profile(const HardwareProfile& p, const std::filesystem::path& file) {
    write_text_file(file, to_json_string(p));
}
ImportanceMap load_importance(const std::filesystem::path& file) {
    return importance_from_json(read_text_file(file));
}
void save_importance(const ImportanceMap& im, const std::filesystem::path& file) {
    write_text_file(file, to_json_string(im));
}
ExecutionPlan load_plan(const std::filesystem::path& file) {
    return plan_from_json(read_text_file(file));
}
void save_plan(const ExecutionPlan& p, const std::filesystem::path& file) {
    write_text_file(file, to_json_string(p));
}

std::string hash_bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_file(const std::filesystem::path& file) {
    std::string bytes = read_text_file(file);
    return hash_bytes(bytes.data(), bytes.size());
}

}  // namespace sti
