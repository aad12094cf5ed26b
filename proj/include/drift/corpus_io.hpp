#ifndef DRIFT_CORPUS_IO_HPP
#define DRIFT_CORPUS_IO_HPP

// On-disk formats for embedding clouds (ECL1), loss logs, label tables and run
// manifests, plus the validated in-memory values they load into.
//
// ECL1 layout, all integers little-endian:
//   "ECL1" | u16 version (=1) | u16 layer_index | u64 n | u32 d |
//   u16 tag_len | tag bytes | n*d float32 row-major | n x (u16 id_len | id bytes)

#include "drift/detail/csv.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace drift {

inline constexpr int kLayerCount = 13;
inline constexpr int kFinalLayer = 12;
inline constexpr std::uint16_t kEcl1Version = 1;

using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// [CLS] vectors of one (evaluation set, model, layer).
struct EmbeddingCloud {
    int layer_index = 0;
    std::string model_tag;
    std::vector<std::string> sample_ids;
    FloatRows vectors;

    [[nodiscard]] Eigen::Index rows() const { return vectors.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return vectors.cols(); }
    [[nodiscard]] Matrix to_double() const { return vectors.cast<double>(); }

    /// Bitwise equality of the payload (so -0.0 != 0.0), plus metadata.
    [[nodiscard]] bool identical(const EmbeddingCloud& other) const {
        if (layer_index != other.layer_index || model_tag != other.model_tag ||
            sample_ids != other.sample_ids || rows() != other.rows() || cols() != other.cols())
            return false;
        return std::memcmp(vectors.data(), other.vectors.data(),
                           static_cast<std::size_t>(vectors.size()) * sizeof(float)) == 0;
    }
};

inline void validate(const EmbeddingCloud& cloud) {
    if (cloud.layer_index < 0 || cloud.layer_index >= kLayerCount)
        throw ValidationError("layer_index " + std::to_string(cloud.layer_index) + " outside [0,12]");
    if (cloud.rows() < 1 || cloud.cols() < 1)
        throw ValidationError("cloud at layer " + std::to_string(cloud.layer_index) + " is empty");
    if (static_cast<Eigen::Index>(cloud.sample_ids.size()) != cloud.rows())
        throw ValidationError("cloud has " + std::to_string(cloud.rows()) + " rows but " +
                              std::to_string(cloud.sample_ids.size()) + " sample ids");
    for (Eigen::Index r = 0; r < cloud.rows(); ++r) {
        if (!cloud.vectors.row(r).allFinite())
            throw ValidationError("non-finite value in row " + std::to_string(r) + " (layer " +
                                  std::to_string(cloud.layer_index) + ")");
    }
    std::unordered_set<std::string> seen;
    seen.reserve(cloud.sample_ids.size());
    for (std::size_t i = 0; i < cloud.sample_ids.size(); ++i) {
        if (!seen.insert(cloud.sample_ids[i]).second)
            throw ValidationError("duplicate sample id '" + cloud.sample_ids[i] + "' at row " +
                                  std::to_string(i));
    }
}

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    std::uint64_t uint(int width, const char* what) {
        need(static_cast<std::size_t>(width), what);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string_view take(std::size_t len, const char* what) {
        need(len, what);
        auto s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    void need(std::size_t len, const char* what) const {
        if (bytes_.size() - pos_ < len)
            throw FormatError(source_ + ": truncated " + what + " at offset " + std::to_string(pos_) +
                              " (need " + std::to_string(len) + " bytes, have " +
                              std::to_string(bytes_.size() - pos_) + ")");
    }
    [[nodiscard]] std::size_t position() const { return pos_; }
    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
    [[nodiscard]] const std::string& source() const { return source_; }

private:
    std::string_view bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Serializes a validated cloud to ECL1 bytes.
inline std::string encode_cloud(const EmbeddingCloud& cloud) {
    validate(cloud);
    if (cloud.model_tag.size() > 0xffff) throw ValidationError("model_tag longer than 65535 bytes");
    if (cloud.cols() > 0xffffffffLL) throw ValidationError("dimension exceeds u32");
    std::string out;
    out.reserve(22 + cloud.model_tag.size() + static_cast<std::size_t>(cloud.vectors.size()) * 4 +
                cloud.sample_ids.size() * 8);
    out += "ECL1";
    detail::put_u16(out, kEcl1Version);
    detail::put_u16(out, static_cast<std::uint16_t>(cloud.layer_index));
    detail::put_u64(out, static_cast<std::uint64_t>(cloud.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(cloud.cols()));
    detail::put_u16(out, static_cast<std::uint16_t>(cloud.model_tag.size()));
    out += cloud.model_tag;
    for (Eigen::Index r = 0; r < cloud.rows(); ++r)
        for (Eigen::Index c = 0; c < cloud.cols(); ++c)
            detail::put_u32(out, std::bit_cast<std::uint32_t>(cloud.vectors(r, c)));
    for (std::size_t i = 0; i < cloud.sample_ids.size(); ++i) {
        const auto& id = cloud.sample_ids[i];
        if (id.size() > 0xffff)
            throw ValidationError("sample id at row " + std::to_string(i) + " longer than 65535 bytes");
        detail::put_u16(out, static_cast<std::uint16_t>(id.size()));
        out += id;
    }
    return out;
}

inline EmbeddingCloud decode_cloud(std::string_view bytes, const std::string& source = "<memory>") {
    detail::ByteReader in(bytes, source);
    auto magic = in.take(4, "magic");
    if (magic != "ECL1") throw FormatError(source + ": bad magic (expected ECL1)");
    auto version = in.uint(2, "version");
    if (version != kEcl1Version)
        throw FormatError(source + ": unsupported ECL1 version " + std::to_string(version));
    EmbeddingCloud cloud;
    cloud.layer_index = static_cast<int>(in.uint(2, "layer_index"));
    if (cloud.layer_index >= kLayerCount)
        throw FormatError(source + ": layer_index " + std::to_string(cloud.layer_index) + " outside [0,12]");
    std::uint64_t n = in.uint(8, "row count");
    std::uint64_t d = in.uint(4, "dimension");
    if (n == 0 || d == 0) throw FormatError(source + ": empty cloud (n=" + std::to_string(n) +
                                            ", d=" + std::to_string(d) + ")");
    auto tag_len = in.uint(2, "model_tag length");
    cloud.model_tag = std::string(in.take(tag_len, "model_tag"));
    if (n > in.remaining() / 4 / d)
        throw FormatError(source + ": payload truncated: header declares " + std::to_string(n) + "x" +
                          std::to_string(d) + " floats but only " + std::to_string(in.remaining()) +
                          " bytes follow offset " + std::to_string(in.position()));
    cloud.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    auto payload = in.take(n * d * 4, "payload");
    for (std::uint64_t i = 0; i < n * d; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
        cloud.vectors.data()[i] = std::bit_cast<float>(bits);
    }
    cloud.sample_ids.reserve(n);
    for (std::uint64_t r = 0; r < n; ++r) {
        if (in.remaining() < 2)
            throw FormatError(source + ": id block truncated at row " + std::to_string(r));
        auto len = in.uint(2, "id length");
        if (in.remaining() < len)
            throw FormatError(source + ": id block truncated at row " + std::to_string(r));
        cloud.sample_ids.emplace_back(in.take(len, "id"));
    }
    if (in.remaining() != 0)
        throw FormatError(source + ": " + std::to_string(in.remaining()) + " trailing bytes after id block");
    try {
        validate(cloud);
    } catch (const ValidationError& e) {
        throw FormatError(source + ": " + e.what());
    }
    return cloud;
}

inline void write_cloud(const EmbeddingCloud& cloud, const std::filesystem::path& path) {
    detail::write_text_file(path.string(), encode_cloud(cloud));
}

inline EmbeddingCloud read_cloud(const std::filesystem::path& path) {
    return decode_cloud(detail::read_text_file(path.string()), path.string());
}

/// The 1+12 layer clouds of one model on one evaluation set.
struct LayerStack {
    std::string model_tag;
    std::vector<EmbeddingCloud> clouds;

    [[nodiscard]] const EmbeddingCloud& layer(int index) const { return clouds.at(static_cast<std::size_t>(index)); }
    [[nodiscard]] const EmbeddingCloud& final_layer() const { return layer(kFinalLayer); }
    [[nodiscard]] const std::vector<std::string>& sample_ids() const { return clouds.front().sample_ids; }
};

inline void validate(const LayerStack& stack) {
    if (stack.clouds.size() != kLayerCount)
        throw ValidationError("13 layers required, stack '" + stack.model_tag + "' has " +
                              std::to_string(stack.clouds.size()));
    const auto& first = stack.clouds.front();
    for (int l = 0; l < kLayerCount; ++l) {
        const auto& c = stack.clouds[static_cast<std::size_t>(l)];
        validate(c);
        if (c.layer_index != l)
            throw ValidationError("stack '" + stack.model_tag + "' position " + std::to_string(l) +
                                  " holds layer " + std::to_string(c.layer_index));
        if (c.rows() != first.rows() || c.cols() != first.cols())
            throw ValidationError("layer " + std::to_string(l) + " shape differs from layer 0");
        if (c.sample_ids != first.sample_ids) {
            std::size_t i = 0;
            while (i < c.sample_ids.size() && c.sample_ids[i] == first.sample_ids[i]) ++i;
            throw ValidationError("layer " + std::to_string(l) + " sample id mismatch at row " + std::to_string(i));
        }
    }
}

inline std::filesystem::path layer_file(const std::filesystem::path& dir, int layer) {
    char name[16];
    std::snprintf(name, sizeof(name), "layer_%02d.ecl", layer);
    return dir / name;
}

inline void write_stack(const LayerStack& stack, const std::filesystem::path& dir) {
    validate(stack);
    std::filesystem::create_directories(dir);
    for (const auto& c : stack.clouds) write_cloud(c, layer_file(dir, c.layer_index));
}

inline LayerStack read_stack(const std::filesystem::path& dir) {
    LayerStack stack;
    for (int l = 0; l < kLayerCount; ++l) {
        auto path = layer_file(dir, l);
        if (!std::filesystem::exists(path))
            throw ValidationError(dir.string() + ": 13 layers required, layer " + std::to_string(l) + " missing");
        stack.clouds.push_back(read_cloud(path));
    }
    stack.model_tag = stack.clouds.front().model_tag;
    validate(stack);
    return stack;
}

/// One logged point of a domain fine-tuning run. Losses are in nats.
struct LossPoint {
    long long step = 0;
    double epoch = 0.0;
    long long tokens_seen = 0;
    double train_loss = 0.0;
    std::optional<double> eval_loss;
};

struct LossCurve {
    std::vector<LossPoint> points;
};

inline void validate(const LossCurve& curve) {
    if (curve.points.size() < 2)
        throw ValidationError("loss curve needs at least 2 points, got " + std::to_string(curve.points.size()));
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        const auto& p = curve.points[i];
        auto where = " at point " + std::to_string(i) + " (step " + std::to_string(p.step) + ")";
        if (!(p.epoch >= 0.0) || !std::isfinite(p.epoch)) throw ValidationError("invalid epoch" + where);
        if (p.tokens_seen < 0) throw ValidationError("negative tokens_seen" + where);
        if (!(p.train_loss >= 0.0) || !std::isfinite(p.train_loss)) throw ValidationError("invalid train_loss" + where);
        if (p.eval_loss && (!(*p.eval_loss >= 0.0) || !std::isfinite(*p.eval_loss)))
            throw ValidationError("invalid eval_loss" + where);
        if (i > 0) {
            const auto& prev = curve.points[i - 1];
            if (p.step <= prev.step) throw ValidationError("steps not strictly increasing" + where);
            if (p.tokens_seen < prev.tokens_seen) throw ValidationError("tokens_seen decreasing" + where);
        }
    }
}

inline LossCurve read_loss_log(const std::filesystem::path& path) {
    auto [header, rows] = detail::read_csv(path.string());
    const std::vector<std::string> expected{"step", "epoch", "tokens_seen", "train_loss", "eval_loss"};
    if (header != expected)
        throw FormatError(path.string() + ": header must be step,epoch,tokens_seen,train_loss,eval_loss");
    LossCurve curve;
    for (const auto& row : rows) {
        auto where = path.string() + ":" + std::to_string(row.line);
        if (row.fields.size() != 5) throw FormatError(where + ": expected 5 fields");
        auto step = detail::parse_int(row.fields[0]);
        auto epoch = detail::parse_double(row.fields[1]);
        auto tokens = detail::parse_int(row.fields[2]);
        auto train = detail::parse_double(row.fields[3]);
        if (!step || !epoch || !tokens || !train) throw FormatError(where + ": unparsable number");
        LossPoint p{*step, *epoch, *tokens, *train, std::nullopt};
        if (row.fields[4].find_first_not_of(" \t") != std::string::npos) {
            auto ev = detail::parse_double(row.fields[4]);
            if (!ev) throw FormatError(where + ": unparsable eval_loss");
            p.eval_loss = *ev;
        }
        curve.points.push_back(p);
    }
    try {
        validate(curve);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return curve;
}

inline void write_loss_log(const LossCurve& curve, const std::filesystem::path& path,
                           const std::vector<std::string>& comments = {}) {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    out += "step,epoch,tokens_seen,train_loss,eval_loss\n";
    for (const auto& p : curve.points) {
        out += std::to_string(p.step) + "," + detail::format_double(p.epoch) + "," +
               std::to_string(p.tokens_seen) + "," + detail::format_double(p.train_loss) + "," +
               detail::format_optional(p.eval_loss) + "\n";
    }
    detail::write_text_file(path.string(), out);
}

/// sample_id -> class label. class_set is sorted lexicographically and defines the dense
/// integer encoding used by the classifiers.
struct LabelTable {
    std::unordered_map<std::string, std::string> entries;
    std::vector<std::string> class_set;

    static LabelTable from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
        LabelTable t;
        for (const auto& [id, label] : pairs) {
            if (!t.entries.emplace(id, label).second)
                throw ValidationError("duplicate label for sample id '" + id + "'");
        }
        std::vector<std::string> classes;
        for (const auto& [id, label] : t.entries) classes.push_back(label);
        std::sort(classes.begin(), classes.end());
        classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
        t.class_set = std::move(classes);
        return t;
    }

    [[nodiscard]] int class_index(const std::string& label) const {
        auto it = std::lower_bound(class_set.begin(), class_set.end(), label);
        if (it == class_set.end() || *it != label) throw ValidationError("unknown class label '" + label + "'");
        return static_cast<int>(it - class_set.begin());
    }

    /// Dense class indices for `ids`, in order. Throws naming the first id without a label.
    [[nodiscard]] std::vector<int> encode(const std::vector<std::string>& ids) const {
        std::vector<int> codes;
        codes.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto it = entries.find(ids[i]);
            if (it == entries.end())
                throw ValidationError("no label for sample id '" + ids[i] + "' (row " + std::to_string(i) + ")");
            codes.push_back(class_index(it->second));
        }
        return codes;
    }
};

inline LabelTable read_labels(const std::filesystem::path& path) {
    auto [header, rows] = detail::read_csv(path.string());
    if (header.size() != 2 || header[0] != "sample_id" || header[1] != "label")
        throw FormatError(path.string() + ": header must be sample_id,label");
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(rows.size());
    for (const auto& row : rows) {
        if (row.fields.size() != 2)
            throw FormatError(path.string() + ":" + std::to_string(row.line) + ": expected 2 fields");
        pairs.emplace_back(row.fields[0], row.fields[1]);
    }
    try {
        return LabelTable::from_pairs(pairs);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline void write_labels(const std::vector<std::string>& ids, const std::vector<std::string>& labels,
                         const std::filesystem::path& path) {
    if (ids.size() != labels.size()) throw ValidationError("ids/labels length mismatch");
    std::string out = "sample_id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        out += detail::escape_csv(ids[i]) + "," + detail::escape_csv(labels[i]) + "\n";
    detail::write_text_file(path.string(), out);
}

/// Pointers to every file of one domain's evaluation set. Relative paths resolve against
/// the manifest's own directory.
struct RunManifest {
    std::string domain_name;
    std::filesystem::path base_dir;
    std::filesystem::path ft_dir;
    std::filesystem::path loss_log;
    std::optional<std::filesystem::path> labels;
    std::string split_tag = "B";
    std::int64_t seed = 0;
    std::string extraction_notes;
    nlohmann::json extra = nlohmann::json::object(); // e.g. generator parameters
    std::filesystem::path source; // manifest file this was read from, if any
};

inline nlohmann::json to_json(const RunManifest& m) {
    nlohmann::json j;
    j["domain_name"] = m.domain_name;
    j["base_dir"] = m.base_dir.generic_string();
    j["ft_dir"] = m.ft_dir.generic_string();
    j["loss_log"] = m.loss_log.generic_string();
    if (m.labels) j["labels"] = m.labels->generic_string();
    j["seed"] = m.seed;
    j["split_tag"] = m.split_tag;
    if (!m.extraction_notes.empty()) j["extraction_notes"] = m.extraction_notes;
    if (!m.extra.empty()) j["synthetic"] = m.extra;
    return j;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    detail::write_text_file(path.string(), to_json(m).dump(2) + "\n");
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_text_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid manifest JSON: " + e.what());
    }
    auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    auto required = [&](const char* key) -> std::string {
        if (!j.contains(key) || !j[key].is_string())
            throw FormatError(path.string() + ": manifest missing string key '" + key + "'");
        return j[key].get<std::string>();
    };
    RunManifest m;
    m.domain_name = required("domain_name");
    m.base_dir = resolve(required("base_dir"));
    m.ft_dir = resolve(required("ft_dir"));
    m.loss_log = resolve(required("loss_log"));
    if (j.contains("labels") && !j["labels"].is_null()) m.labels = resolve(j["labels"].get<std::string>());
    if (!j.contains("seed") || !j["seed"].is_number_integer())
        throw FormatError(path.string() + ": manifest missing integer key 'seed'");
    m.seed = j["seed"].get<std::int64_t>();
    m.split_tag = j.value("split_tag", std::string("B"));
    m.extraction_notes = j.value("extraction_notes", std::string());
    if (j.contains("synthetic")) m.extra = j["synthetic"];
    m.source = path;
    return m;
}

/// Everything the analyses need for one domain, with cross-file invariants enforced.
struct DomainRun {
    RunManifest manifest;
    LayerStack base;
    LayerStack ft;
    LossCurve loss;
    std::optional<LabelTable> labels;

    [[nodiscard]] const std::string& domain() const { return manifest.domain_name; }
    [[nodiscard]] const std::vector<std::string>& sample_ids() const { return base.sample_ids(); }
};

inline void check_pair(const LayerStack& base, const LayerStack& ft) {
    if (base.sample_ids() != ft.sample_ids()) {
        const auto& a = base.sample_ids();
        const auto& b = ft.sample_ids();
        std::size_t i = 0;
        while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
        throw ValidationError("base/ft sample id mismatch at row " + std::to_string(i));
    }
    if (base.final_layer().cols() != ft.final_layer().cols())
        throw ValidationError("base/ft hidden size differs (" + std::to_string(base.final_layer().cols()) +
                              " vs " + std::to_string(ft.final_layer().cols()) + ")");
}

inline void check_label_coverage(const LabelTable& labels, const std::vector<std::string>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!labels.entries.count(ids[i]))
            throw ValidationError("labels do not cover sample id '" + ids[i] + "' (row " + std::to_string(i) + ")");
    }
}

inline DomainRun load_run(const std::filesystem::path& manifest_path, bool require_labels = false) {
    DomainRun run;
    run.manifest = read_manifest(manifest_path);
    auto ctx = [&](const std::exception& e) { return run.manifest.domain_name + ": " + e.what(); };
    try {
        run.base = read_stack(run.manifest.base_dir);
        run.ft = read_stack(run.manifest.ft_dir);
        check_pair(run.base, run.ft);
        run.loss = read_loss_log(run.manifest.loss_log);
        if (run.manifest.labels) {
            run.labels = read_labels(*run.manifest.labels);
            check_label_coverage(*run.labels, run.sample_ids());
        } else if (require_labels) {
            throw ValidationError("manifest has no labels but labels are required");
        }
    } catch (const FormatError& e) {
        throw FormatError(ctx(e));
    } catch (const ValidationError& e) {
        throw ValidationError(ctx(e));
    } catch (const IoError& e) {
        throw IoError(ctx(e));
    }
    return run;
}

} // namespace drift

#endif
