#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairdiff/control.hpp"
#include "fairdiff/diffusion.hpp"
#include "fairdiff/mask_codec.hpp"
#include "fairdiff/toy_shapes.hpp"

namespace fairdiff {

struct ManifestRow {
    std::string id;
    std::string image;  // path as written in the manifest
    std::string mask;
    std::filesystem::path image_abs;  // resolved against the manifest directory
    std::filesystem::path mask_abs;
    std::map<std::string, std::string> attrs;
    std::string split;       // train | test
    std::string provenance;  // real | synthetic
};

inline constexpr const char* kUnspecifiedGroup = "synthetic-unspecified";

namespace manifest_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace manifest_detail

/// Load and validate a manifest CSV (header: id,image,mask,split,provenance,
/// attr:*). All row diagnostics are collected; any error fails the whole load.
inline std::vector<ManifestRow> load_manifest(const std::string& path) {
    namespace fs = std::filesystem;
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open " + path);
    const fs::path base = fs::path(path).parent_path();
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("manifest: empty file " + path);
    const auto header = manifest_detail::split_csv_line(line);
    std::map<std::string, size_t> col;
    std::vector<std::pair<size_t, std::string>> attr_cols;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i].rfind("attr:", 0) == 0)
            attr_cols.push_back({i, header[i].substr(5)});
        else
            col[header[i]] = i;
    }
    std::vector<std::string> errors;
    for (const char* required : {"id", "image", "mask", "split", "provenance"})
        if (!col.count(required)) errors.push_back("missing column '" + std::string(required) + "'");
    if (attr_cols.empty()) errors.push_back("no attr:* columns");
    if (!errors.empty()) {
        std::string msg = "manifest " + path + ": ";
        for (const auto& e : errors) msg += e + "; ";
        throw std::runtime_error(msg);
    }

    std::vector<ManifestRow> rows;
    std::set<std::string> seen_ids;
    size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = manifest_detail::split_csv_line(line);
        if (f.size() != header.size()) {
            errors.push_back("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                             " fields, got " + std::to_string(f.size()));
            continue;
        }
        ManifestRow r;
        r.id = f[col["id"]];
        r.image = f[col["image"]];
        r.mask = f[col["mask"]];
        r.split = f[col["split"]];
        r.provenance = f[col["provenance"]];
        for (const auto& [idx, name] : attr_cols)
            if (!f[idx].empty()) r.attrs[name] = f[idx];
        r.image_abs = fs::weakly_canonical(base / r.image);
        r.mask_abs = fs::weakly_canonical(base / r.mask);

        if (r.id.empty()) errors.push_back("line " + std::to_string(line_no) + ": empty id");
        if (!seen_ids.insert(r.id).second) errors.push_back("duplicate id '" + r.id + "'");
        if (r.split != "train" && r.split != "test")
            errors.push_back("row '" + r.id + "': unknown split '" + r.split + "'");
        if (r.provenance != "real" && r.provenance != "synthetic")
            errors.push_back("row '" + r.id + "': unknown provenance '" + r.provenance + "'");
        if (r.attrs.empty()) errors.push_back("row '" + r.id + "': no attributes");
        if (!fs::exists(r.image_abs)) errors.push_back("row '" + r.id + "': missing image file " + r.image);
        if (!fs::exists(r.mask_abs)) errors.push_back("row '" + r.id + "': missing mask file " + r.mask);
        rows.push_back(std::move(r));
    }
    if (!errors.empty()) {
        std::string msg = "manifest " + path + " failed validation:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw std::runtime_error(msg);
    }
    return rows;
}

/// Write rows with the attribute-column union (sorted); paths are written as
/// stored in ManifestRow::image / ::mask.
inline void save_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::set<std::string> attr_names;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.attrs) attr_names.insert(k);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("manifest: cannot open for writing " + path);
    os << "id,image,mask,split,provenance";
    for (const auto& a : attr_names) os << ",attr:" << a;
    os << "\n";
    for (const auto& r : rows) {
        os << r.id << ',' << r.image << ',' << r.mask << ',' << r.split << ',' << r.provenance;
        for (const auto& a : attr_names) {
            auto it = r.attrs.find(a);
            os << ',' << (it == r.attrs.end() ? "" : it->second);
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("manifest: write failed " + path);
}

// ---- Equal-Scale data combination ----

struct GroupAction {
    enum class Kind { KeepAll, Subsample, Synthesize };
    std::string group;
    size_t n_real = 0;
    Kind kind = Kind::KeepAll;
    size_t count = 0;  // keep count for Subsample, new-sample count for Synthesize
};

struct CombinePlan {
    std::string attribute;
    size_t n_target = 0;
    uint64_t seed = 0;
    std::vector<GroupAction> actions;  // sorted by group name
};

inline constexpr size_t kAutoTarget = 0;

/// Per-group case split: keep groups at the target, subsample larger ones,
/// synthesize the shortfall for smaller ones. AUTO picks the largest group.
inline CombinePlan plan_equal_scale(const std::vector<ManifestRow>& rows, const std::string& attribute,
                                    size_t n_target, uint64_t seed) {
    if (rows.empty()) throw std::invalid_argument("plan_equal_scale: no rows");
    std::map<std::string, size_t> counts;
    for (const auto& r : rows) {
        auto it = r.attrs.find(attribute);
        if (it == r.attrs.end())
            throw std::invalid_argument("plan_equal_scale: attribute '" + attribute + "' missing on row '" + r.id + "'");
        counts[it->second] += 1;
    }
    CombinePlan plan;
    plan.attribute = attribute;
    plan.seed = seed;
    plan.n_target = n_target;
    if (n_target == kAutoTarget)
        for (const auto& [g, n] : counts) plan.n_target = std::max(plan.n_target, n);
    for (const auto& [g, n] : counts) {
        GroupAction a;
        a.group = g;
        a.n_real = n;
        if (n == plan.n_target) {
            a.kind = GroupAction::Kind::KeepAll;
            a.count = n;
        } else if (n > plan.n_target) {
            a.kind = GroupAction::Kind::Subsample;
            a.count = plan.n_target;
        } else {
            a.kind = GroupAction::Kind::Synthesize;
            a.count = plan.n_target - n;
        }
        plan.actions.push_back(std::move(a));
    }
    return plan;
}

/// Seeded uniform subsample without replacement; returns selected indices in
/// their original order.
inline std::vector<size_t> subsample_indices(size_t n, size_t k, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + size_t(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct ExecuteResult {
    std::vector<ManifestRow> rows;
    std::map<std::string, size_t> synthesized;
    std::map<std::string, size_t> decode_failures;
};

/// Materialize a combine plan: keep/subsample real rows and synthesize the
/// planned samples (diffusion sample -> decoded mask -> controlled image).
/// All synthetic files are staged in a temporary directory and moved into
/// place only when every sample succeeded.
inline ExecuteResult execute_plan(const CombinePlan& plan, const std::vector<ManifestRow>& rows,
                                  const GroupModelRegistry& registry, const CodecConfig& codec_cfg,
                                  ControlBlock& synth, const std::string& out_root, int width, int height,
                                  int retry_cap = 8) {
    namespace fs = std::filesystem;
    for (const auto& a : plan.actions)
        if (a.kind == GroupAction::Kind::Synthesize && !registry.models.count(a.group))
            throw std::runtime_error("execute_plan: no model for group '" + a.group + "' (nothing was written)");

    std::map<std::string, std::vector<const ManifestRow*>> by_group;
    for (const auto& r : rows) by_group[r.attrs.at(plan.attribute)].push_back(&r);
    std::set<std::string> attr_union;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.attrs) attr_union.insert(k);

    const fs::path root(out_root);
    const fs::path final_dir = root / ("synthetic_" + plan.attribute);
    const fs::path stage = root / (".stage_" + plan.attribute);
    fs::remove_all(stage);
    fs::create_directories(stage / "masks");
    fs::create_directories(stage / "images");
    fs::create_directories(stage / "pointclouds");

    ExecuteResult result;
    for (const auto& action : plan.actions) {
        auto& group_rows = by_group[action.group];
        std::sort(group_rows.begin(), group_rows.end(),
                  [](const ManifestRow* a, const ManifestRow* b) { return a->id < b->id; });
        if (action.kind == GroupAction::Kind::Subsample) {
            Rng rng(splitmix64(plan.seed ^ hash_str("subsample/" + action.group)));
            for (size_t i : subsample_indices(group_rows.size(), action.count, rng))
                result.rows.push_back(*group_rows[i]);
            continue;
        }
        for (const auto* r : group_rows) result.rows.push_back(*r);
        if (action.kind == GroupAction::Kind::KeepAll) continue;

        // synthetic samples inherit the group's spatial statistics from its
        // real clouds (normalization record mean)
        NormRecord synth_norm{width / 2.0, height / 2.0, 0.29 * std::min(width, height)};
        {
            double cx = 0.0, cy = 0.0, sc = 0.0;
            size_t n = 0;
            for (const auto* r : group_rows) {
                if (n >= 10) break;
                const auto cloud = encode_mask(load_mask_png(r->mask_abs.string()), codec_cfg);
                cx += cloud.norm.cx;
                cy += cloud.norm.cy;
                sc += cloud.norm.scale;
                ++n;
            }
            if (n > 0) synth_norm = {cx / double(n), cy / double(n), sc / double(n)};
        }

        for (size_t i = 0; i < action.count; ++i) {
            BoundaryPointCloud cloud;
            MaskImage mask;
            bool ok = false;
            for (int attempt = 0; attempt <= retry_cap && !ok; ++attempt) {
                Rng rng(splitmix64(plan.seed ^ hash_str("synth/" + action.group + "/" + std::to_string(i) + "/" +
                                                        std::to_string(attempt))));
                cloud = registry.sample_for_group(action.group, rng, codec_cfg.n_points, codec_cfg.z0);
                cloud.norm = synth_norm;
                mask = decode_point_cloud(cloud, width, height);
                ok = mask.count(CUP) > 0 && mask.count(DISC) > 0;
                if (!ok) result.decode_failures[action.group] += 1;
            }
            if (!ok) {
                fs::remove_all(stage);
                std::string counts;
                for (const auto& [g, c] : result.decode_failures) counts += " " + g + "=" + std::to_string(c);
                throw std::runtime_error("execute_plan: decode failures beyond retry cap; per-group counts:" + counts);
            }
            const std::string id = "syn_" + plan.attribute + "_" + action.group + "_" + std::to_string(i);
            save_mask_png((stage / "masks" / (id + ".png")).string(), mask);
            save_toy_png((stage / "images" / (id + ".png")).string(), synth_image(mask, synth));
            save_fpc((stage / "pointclouds" / (id + ".fpc")).string(), cloud);

            ManifestRow row;
            row.id = id;
            const std::string rel = "synthetic_" + plan.attribute;
            row.mask = rel + "/masks/" + id + ".png";
            row.image = rel + "/images/" + id + ".png";
            row.mask_abs = final_dir / "masks" / (id + ".png");
            row.image_abs = final_dir / "images" / (id + ".png");
            row.split = "train";
            row.provenance = "synthetic";
            for (const auto& a : attr_union) row.attrs[a] = kUnspecifiedGroup;
            row.attrs[plan.attribute] = action.group;
            result.rows.push_back(std::move(row));
            result.synthesized[action.group] += 1;
        }
    }

    fs::remove_all(final_dir);
    fs::rename(stage, final_dir);

    // Equal-Scale postcondition, machine-checked before returning
    std::map<std::string, size_t> final_counts;
    for (const auto& r : result.rows) final_counts[r.attrs.at(plan.attribute)] += 1;
    for (const auto& [g, n] : final_counts)
        if (n != plan.n_target)
            throw std::logic_error("execute_plan: group '" + g + "' ended with " + std::to_string(n) +
                                   " rows, target " + std::to_string(plan.n_target));
    return result;
}

// ---- toy dataset generation ----

struct ToyGroupSpec {
    std::string name;
    int n_train = 0;
    int n_test = 0;
    ShapeFamily family;
};

struct ToyDatasetSpec {
    int width = 64, height = 64;
    std::string attribute = "group";
    std::vector<ToyGroupSpec> groups;
    ToyRenderConfig render;
};

/// Write a complete toy dataset (masks, images, manifest) under `out_root`.
/// Returns the manifest rows. Identical seeds produce identical files.
inline std::vector<ManifestRow> make_toy_dataset(const ToyDatasetSpec& spec, uint64_t seed,
                                                 const std::string& out_root) {
    namespace fs = std::filesystem;
    if (spec.groups.size() < 2) throw std::invalid_argument("make_toy_dataset: need at least 2 groups");
    for (const auto& g : spec.groups)
        if (g.family.ratio_mean >= 1.0 || g.family.ratio_mean <= 0.0)
            throw std::invalid_argument("make_toy_dataset: group '" + g.name +
                                        "' cup/disc area ratio must lie in (0,1)");
    const fs::path root(out_root);
    fs::create_directories(root / "masks");
    fs::create_directories(root / "images");
    fs::create_directories(root / "manifests");

    std::vector<ManifestRow> rows;
    for (const auto& g : spec.groups) {
        Rng rng(splitmix64(seed ^ hash_str("toygroup/" + g.name)));
        for (int i = 0; i < g.n_train + g.n_test; ++i) {
            const bool is_test = i >= g.n_train;
            const std::string id = g.name + (is_test ? "_test_" : "_train_") + std::to_string(is_test ? i - g.n_train : i);
            const MaskImage mask = random_ellipse_pair_mask(g.family, spec.width, spec.height, rng);
            const double gx = rng.uniform(-spec.render.gradient_max, spec.render.gradient_max);
            const double gy = rng.uniform(-spec.render.gradient_max, spec.render.gradient_max);
            const ToyImage img = render_toy_image(mask, spec.render, gx, gy, spec.render.noise_sd, rng);
            save_mask_png((root / "masks" / (id + ".png")).string(), mask);
            save_toy_png((root / "images" / (id + ".png")).string(), img);

            ManifestRow row;
            row.id = id;
            row.mask = "../masks/" + id + ".png";
            row.image = "../images/" + id + ".png";
            row.mask_abs = root / "masks" / (id + ".png");
            row.image_abs = root / "images" / (id + ".png");
            row.split = is_test ? "test" : "train";
            row.provenance = "real";
            row.attrs[spec.attribute] = g.name;
            rows.push_back(std::move(row));
        }
    }
    save_manifest((root / "manifests" / "toy.csv").string(), rows);
    return rows;
}

inline std::vector<ManifestRow> filter_rows(const std::vector<ManifestRow>& rows, const std::string& split,
                                            const std::string& provenance = "") {
    std::vector<ManifestRow> out;
    for (const auto& r : rows)
        if ((split.empty() || r.split == split) && (provenance.empty() || r.provenance == provenance))
            out.push_back(r);
    return out;
}

}  // namespace fairdiff
