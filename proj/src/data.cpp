#include "dronetune/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dronetune/errors.hpp"
#include "dronetune/kernels.hpp"
#include "dronetune/rng.hpp"

namespace dronetune::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

// Largest-remainder apportionment of n into parts proportional to ratios.
// Ties resolved toward lower indices, so the result is deterministic.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& ratios) {
    std::vector<std::size_t> base(ratios.size());
    std::vector<double> frac(ratios.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        double exact = ratios[i] * static_cast<double>(n);
        base[i] = static_cast<std::size_t>(exact + 1e-9);
        frac[i] = exact - static_cast<double>(base[i]);
        assigned += base[i];
    }
    std::vector<std::size_t> order(ratios.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) base[order[i % order.size()]] += 1;
    return base;
}

std::vector<std::vector<std::size_t>> per_class_indices(const Manifest& m) {
    std::vector<std::vector<std::size_t>> by_class(m.classes.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i)
        by_class[static_cast<std::size_t>(m.entries[i].label_index)].push_back(i);
    return by_class;
}

} // namespace

Manifest parse_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open manifest: " + file.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(file.string() + ": no entries (empty file)");
    auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "path" || header[1] != "label")
        throw DataError(file.string() + ": line 1: header must start with 'path,label'");
    const std::size_t n_cols = header.size();

    Manifest m;
    m.root = file.parent_path();
    std::set<std::string> seen_paths;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != n_cols)
            throw DataError(file.string() + ": line " + std::to_string(line_no) + ": expected " +
                            std::to_string(n_cols) + " columns, got " +
                            std::to_string(fields.size()));
        if (fields[0].empty())
            throw DataError(file.string() + ": line " + std::to_string(line_no) + ": empty path");
        if (fields[1].empty())
            throw DataError(file.string() + ": line " + std::to_string(line_no) + ": empty label");
        if (!seen_paths.insert(fields[0]).second)
            throw DataError(file.string() + ": line " + std::to_string(line_no) +
                            ": duplicate path '" + fields[0] + "'");
        ManifestEntry e;
        e.path = fields[0];
        e.label = fields[1];
        e.clip_id = static_cast<long>(m.entries.size());
        m.entries.push_back(std::move(e));
    }
    if (m.entries.empty()) throw DataError(file.string() + ": no entries");

    std::set<std::string> labels;
    for (const auto& e : m.entries) labels.insert(e.label);
    m.classes.assign(labels.begin(), labels.end()); // sorted by std::set
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < m.classes.size(); ++i)
        index[m.classes[i]] = static_cast<int>(i);
    for (auto& e : m.entries) e.label_index = index[e.label];
    return m;
}

std::string_view split_role_name(SplitRole r) {
    switch (r) {
    case SplitRole::Train: return "train";
    case SplitRole::Test: return "test";
    case SplitRole::Validation: return "validation";
    default: return "inference";
    }
}

SplitAssignment stratified_split(const Manifest& m, std::array<double, 4> ratios,
                                 std::uint64_t seed) {
    double total = ratios[0] + ratios[1] + ratios[2] + ratios[3];
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(total));
    auto by_class = per_class_indices(m);
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (by_class[c].size() < 10)
            throw DataError("class '" + m.classes[c] + "' has " +
                            std::to_string(by_class[c].size()) +
                            " entries; stratified split needs >= 10");

    SplitAssignment a;
    a.role_by_clip.assign(m.entries.size(), SplitRole::Train);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        Rng rng(Rng::mix(Rng::mix(seed, 0x517A7ull), c));
        rng.shuffle(idx.begin(), idx.end());
        auto counts = apportion(idx.size(), {ratios.begin(), ratios.end()});
        std::size_t pos = 0;
        for (std::size_t part = 0; part < 4; ++part) {
            for (std::size_t i = 0; i < counts[part]; ++i, ++pos)
                a.role_by_clip[idx[pos]] = static_cast<SplitRole>(part);
        }
    }
    return a;
}

KFoldPlan kfold_plan(const Manifest& m, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold: k must be >= 2");
    auto by_class = per_class_indices(m);
    KFoldPlan plan;
    plan.folds.resize(k);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        Rng rng(Rng::mix(Rng::mix(seed, 0xF01Dull), c));
        rng.shuffle(idx.begin(), idx.end());
        auto head = apportion(idx.size(), {0.1, 0.9});
        std::size_t n_inf = head[0], n_pool = head[1];
        if (n_pool < k)
            throw DataError("class '" + m.classes[c] + "' is too small to stratify into " +
                            std::to_string(k) + " folds");
        for (std::size_t i = 0; i < n_inf; ++i)
            plan.inference.push_back(m.entries[idx[i]].clip_id);
        std::vector<double> fold_ratios(k, 1.0 / static_cast<double>(k));
        auto fold_counts = apportion(n_pool, fold_ratios);
        std::size_t pos = n_inf;
        for (std::size_t f = 0; f < k; ++f)
            for (std::size_t i = 0; i < fold_counts[f]; ++i, ++pos)
                plan.folds[f].push_back(m.entries[idx[pos]].clip_id);
    }
    std::sort(plan.inference.begin(), plan.inference.end());
    for (auto& f : plan.folds) std::sort(f.begin(), f.end());
    return plan;
}

std::string split_report(const Manifest& m, const SplitAssignment& a) {
    std::ostringstream os;
    os << "clip_id,path,label,role\n";
    for (const auto& e : m.entries)
        os << e.clip_id << "," << e.path << "," << e.label << ","
           << split_role_name(a.role(e.clip_id)) << "\n";
    return os.str();
}

std::string kfold_report(const Manifest& m, const KFoldPlan& plan) {
    std::ostringstream os;
    os << "clip_id,path,label,assignment\n";
    std::vector<std::string> tag(m.entries.size(), "");
    for (long id : plan.inference) tag[static_cast<std::size_t>(id)] = "inference";
    for (std::size_t f = 0; f < plan.folds.size(); ++f)
        for (long id : plan.folds[f])
            tag[static_cast<std::size_t>(id)] = "fold" + std::to_string(f);
    for (const auto& e : m.entries)
        os << e.clip_id << "," << e.path << "," << e.label << ","
           << tag[static_cast<std::size_t>(e.clip_id)] << "\n";
    return os.str();
}

std::vector<DataItem> inflate(const std::vector<ManifestEntry>& entries,
                              const SplitAssignment& assignment,
                              const augment::AugmentationPlan& plan) {
    if (plan.k < 0) throw ConfigError("augmentation count k must be >= 0");
    std::vector<DataItem> out;
    out.reserve(entries.size() * (1 + static_cast<std::size_t>(plan.k)));
    for (const auto& e : entries) {
        SplitRole r = assignment.role(e.clip_id);
        if (r == SplitRole::Validation || r == SplitRole::Inference)
            throw DataError("refusing to inflate clip " + std::to_string(e.clip_id) +
                            ": split '" + std::string(split_role_name(r)) +
                            "' never carries augmented data");
        out.push_back({e.clip_id, e.label_index, e.path, -1});
        for (int a = 0; a < plan.k; ++a) out.push_back({e.clip_id, e.label_index, e.path, a});
    }
    return out;
}

std::vector<DataItem> originals_only(const std::vector<ManifestEntry>& entries) {
    std::vector<DataItem> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.clip_id, e.label_index, e.path, -1});
    return out;
}

FeatureSet featurize_items(const std::vector<DataItem>& items, const Manifest& m,
                           const dsp::FeatureConfig& fcfg, const augment::AugmentationSpec& aspec,
                           const augment::AugmentationPlan& plan,
                           const std::filesystem::path& cache_dir) {
    fcfg.validate();
    const bool caching = !cache_dir.empty();
    if (caching) std::filesystem::create_directories(cache_dir);

    // load each referenced clip once
    std::map<std::string, dsp::Waveform> waves;
    for (const auto& it : items) waves.emplace(it.path, dsp::Waveform{});
    std::vector<std::map<std::string, dsp::Waveform>::iterator> wave_list;
    for (auto it = waves.begin(); it != waves.end(); ++it) wave_list.push_back(it);
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
#endif
    for (long long i = 0; i < static_cast<long long>(wave_list.size()); ++i)
        wave_list[i]->second = dsp::ingest_wav(m.root / wave_list[i]->first, fcfg.sample_rate);

    FeatureSet out(items.size());
    std::vector<std::string> errors(items.size());
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
#endif
    for (long long i = 0; i < static_cast<long long>(items.size()); ++i) {
        const auto& it = items[static_cast<std::size_t>(i)];
        try {
            std::filesystem::path cache_file;
            bool loaded = false;
            dsp::MelSpectrogram mel;
            if (caching) {
                cache_file = cache_dir / ("c" + std::to_string(it.clip_id) + "_a" +
                                          std::to_string(it.aug_index) + ".lft");
                if (std::filesystem::exists(cache_file)) {
                    mel = dsp::read_feature_cache(cache_file, fcfg);
                    loaded = true;
                }
            }
            if (!loaded) {
                const dsp::Waveform& base = waves.at(it.path);
                if (it.aug_index >= 0) {
                    auto aug = augment::augment_clip(base, it.clip_id, it.aug_index, plan, aspec);
                    mel = dsp::log_mel(aug, fcfg);
                } else {
                    mel = dsp::log_mel(base, fcfg);
                }
                if (caching) dsp::write_feature_cache(cache_file, mel);
            }
            auto& fi = out[static_cast<std::size_t>(i)];
            fi.clip_id = it.clip_id;
            fi.label_index = it.label_index;
            fi.aug_index = it.aug_index;
            fi.rows = mel.n_mels;
            fi.cols = mel.n_frames;
            fi.values = std::move(mel.values);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError("featurize: " + e);

    for (const auto& fi : out)
        if (fi.rows != out[0].rows || fi.cols != out[0].cols)
            throw DataError("featurize: variable-length clips are unsupported (got " +
                            std::to_string(fi.cols) + " and " + std::to_string(out[0].cols) +
                            " frames)");
    return out;
}

train::ExampleSet to_examples(const FeatureSet& items) {
    train::ExampleSet out;
    out.reserve(items.size());
    for (const auto& fi : items)
        out.push_back({fi.values, fi.rows, fi.cols, fi.label_index});
    return out;
}

} // namespace dronetune::data
