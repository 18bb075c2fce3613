#include "aum/dataset.hpp"

#include <fstream>
#include <sstream>

namespace aum {

namespace {

std::vector<int> parse_labels(const std::string& field, const std::string& where) {
    std::vector<int> out;
    std::stringstream ss(field);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.empty()) continue;
        try {
            std::size_t pos = 0;
            int v = std::stoi(part, &pos);
            if (pos != part.size()) throw std::invalid_argument("trailing");
            out.push_back(v);
        } catch (const std::exception&) {
            throw FormatError(where + ": label id '" + part + "' is not an integer");
        }
    }
    if (out.empty()) throw FormatError(where + ": empty label field");
    return out;
}

}  // namespace

std::vector<ManifestEntry> read_manifest_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        std::size_t comma = line.rfind(',');
        if (comma == std::string::npos)
            throw FormatError(where + ": expected 'path,label'");
        std::string p = line.substr(0, comma), labels = line.substr(comma + 1);
        if (lineno == 1 && (p == "path")) continue;  // optional header row
        entries.push_back({p, parse_labels(labels, where)});
    }
    return entries;
}

void write_index_csv(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write index " + path);
    f << "path,label\n";
    for (const ManifestEntry& e : entries) {
        f << e.path << ",";
        for (std::size_t i = 0; i < e.labels.size(); ++i)
            f << (i ? ";" : "") << e.labels[i];
        f << "\n";
    }
}

Dataset load_dataset(const std::string& index_path) {
    Dataset data;
    for (const ManifestEntry& e : read_manifest_csv(index_path))
        data.push_back({read_feature_record(e.path), e.labels});
    return data;
}

}  // namespace aum
