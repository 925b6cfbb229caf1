#include "protoreg/volume_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "protoreg/error.hpp"
#include "protoreg/nifti.hpp"

namespace protoreg {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

std::vector<int> parse_int_list(const std::string& s, char sep) {
    std::vector<int> out;
    std::istringstream in(s);
    for (std::string tok; std::getline(in, tok, sep);) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& root) {
    return (p.is_absolute() || root.empty()) ? p : root / p;
}

}  // namespace

Catalog::Catalog(std::vector<std::string> institutions, std::vector<ClassInfo> classes)
    : institutions_(std::move(institutions)), classes_(std::move(classes)) {
    std::set<std::string> u(institutions_.begin(), institutions_.end());
    if (u.size() != institutions_.size()) throw ConfigError("duplicate institution id in catalog");
    std::set<int> c;
    for (const auto& ci : classes_) {
        if (ci.id <= 0) throw ConfigError("class ids must be positive (0 is background)");
        if (!c.insert(ci.id).second) throw ConfigError("duplicate class id " + std::to_string(ci.id));
    }
}

void Catalog::add(CatalogEntry entry) {
    if (!has_institution(entry.institution)) {
        throw ConfigError("catalog entry '" + entry.id + "' has undeclared institution '" +
                          entry.institution + "'");
    }
    for (const auto& e : entries_) {
        if (e.id == entry.id) throw ConfigError("duplicate image id '" + entry.id + "'");
    }
    entries_.push_back(std::move(entry));
}

void Catalog::set_folds(std::vector<std::vector<int>> folds) {
    const auto ids = class_ids();
    std::set<int> seen;
    for (const auto& fold : folds) {
        for (int c : fold) {
            if (std::find(ids.begin(), ids.end(), c) == ids.end()) {
                throw ConfigError("fold references unknown class " + std::to_string(c));
            }
            if (!seen.insert(c).second) throw ConfigError("class in more than one fold");
        }
    }
    folds_ = std::move(folds);
}

std::vector<int> Catalog::class_ids() const {
    std::vector<int> out;
    for (const auto& c : classes_) out.push_back(c.id);
    return out;
}

const CatalogEntry& Catalog::entry(const std::string& id) const {
    for (const auto& e : entries_) {
        if (e.id == id) return e;
    }
    throw ConfigError("unknown image id '" + id + "'");
}

std::vector<std::string> Catalog::ids_of(const std::string& institution) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
        if (e.institution == institution) out.push_back(e.id);
    }
    return out;
}

bool Catalog::has_institution(const std::string& u) const {
    return std::find(institutions_.begin(), institutions_.end(), u) != institutions_.end();
}

Catalog Catalog::read(const std::filesystem::path& index, const std::filesystem::path& data_root) {
    std::ifstream in(index);
    if (!in) throw IoError("cannot open catalog " + index.string());
    const auto root = data_root.empty() ? index.parent_path() : data_root;

    std::vector<std::string> institutions;
    std::vector<ClassInfo> classes;
    std::vector<std::vector<int>> folds;
    std::vector<CatalogEntry> cases;
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto tok = split_ws(line);
        if (tok.empty()) continue;
        const auto where = index.string() + ":" + std::to_string(lineno);
        if (tok[0] == "institutions") {
            institutions.assign(tok.begin() + 1, tok.end());
        } else if (tok[0] == "classes") {
            for (size_t i = 1; i < tok.size(); ++i) {
                auto colon = tok[i].find(':');
                if (colon == std::string::npos) throw IoError(where + ": expected <id>:<name>");
                classes.push_back({std::stoi(tok[i].substr(0, colon)), tok[i].substr(colon + 1)});
            }
        } else if (tok[0] == "folds") {
            for (size_t i = 1; i < tok.size(); ++i) folds.push_back(parse_int_list(tok[i], ','));
        } else if (tok[0] == "case") {
            if (tok.size() != 5) throw IoError(where + ": case needs id, volume, label, institution");
            cases.push_back({tok[1], resolve(tok[2], root), resolve(tok[3], root), tok[4]});
        } else {
            throw IoError(where + ": unknown directive '" + tok[0] + "'");
        }
    }
    Catalog cat(std::move(institutions), std::move(classes));
    for (auto& e : cases) cat.add(std::move(e));
    if (!folds.empty()) cat.set_folds(std::move(folds));
    return cat;
}

void Catalog::write(const std::filesystem::path& index) const {
    std::ofstream out(index);
    if (!out) throw IoError("cannot write catalog " + index.string());
    const auto base = index.parent_path();
    out << "institutions";
    for (const auto& u : institutions_) out << '\t' << u;
    out << "\nclasses";
    for (const auto& c : classes_) out << '\t' << c.id << ':' << c.name;
    out << '\n';
    if (folds_) {
        out << "folds";
        for (const auto& fold : *folds_) {
            out << '\t';
            for (size_t i = 0; i < fold.size(); ++i) out << (i ? "," : "") << fold[i];
        }
        out << '\n';
    }
    auto rel = [&](const std::filesystem::path& p) {
        return base.empty() ? p : std::filesystem::relative(p, base);
    };
    for (const auto& e : entries_) {
        out << "case\t" << e.id << '\t' << rel(e.volume_path).string() << '\t'
            << rel(e.label_path).string() << '\t' << e.institution << '\n';
    }
    if (!out) throw IoError("failed writing catalog " + index.string());
}

Case load_case(const std::filesystem::path& volume_path, const std::filesystem::path& label_path,
               const std::vector<int>& classes, std::string id, std::string institution) {
    auto img = nifti::read(volume_path);
    auto lab = nifti::read(label_path);
    if (shape_of(img.data) != shape_of(lab.data)) {
        throw ShapeError("label shape " + to_string(shape_of(lab.data)) + " does not match image shape " +
                         to_string(shape_of(img.data)) + " for " + volume_path.string());
    }
    Case out;
    out.volume.intensities = img.data.to(torch::kFloat32);
    out.volume.spacing = img.spacing;
    out.volume.id = id.empty() ? volume_path.filename().string() : std::move(id);
    out.volume.institution = std::move(institution);
    out.volume.validate();
    if (!torch::isfinite(lab.data).all().item<bool>()) {
        throw ConfigError("non-finite label values in " + label_path.string());
    }
    out.labels.codes = torch::floor(lab.data + 0.5).to(torch::kInt64);
    out.labels.classes = classes;
    return out;
}

Case load_case(const Catalog& catalog, const std::string& id) {
    const auto& e = catalog.entry(id);
    return load_case(e.volume_path, e.label_path, catalog.class_ids(), e.id, e.institution);
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
    nifti::write(path, volume.intensities, volume.spacing, nifti::DataType::kFloat32);
}

void save_labels(const LabelMap& labels, const Spacing3& spacing, const std::filesystem::path& path) {
    const auto max_code = labels.codes.numel() ? labels.codes.max().item<int64_t>() : 0;
    const auto type = max_code < 256 ? nifti::DataType::kUInt8 : nifti::DataType::kInt16;
    nifti::write(path, labels.codes, spacing, type);
}

void save_prediction(const torch::Tensor& mask, const Volume& meta, const std::filesystem::path& path) {
    if (shape_of(mask) != meta.shape() || mask.dim() != 3) {
        throw ShapeError("prediction shape " + to_string(shape_of(mask)) + " does not match volume " +
                         to_string(meta.shape()));
    }
    nifti::write(path, mask.gt(0.5), meta.spacing, nifti::DataType::kUInt8);
}

std::pair<torch::Tensor, Spacing3> load_mask(const std::filesystem::path& path) {
    auto img = nifti::read(path);
    return {img.data.gt(0.5).to(torch::kUInt8), img.spacing};
}

}  // namespace protoreg
