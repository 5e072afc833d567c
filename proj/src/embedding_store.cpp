#include "wildsort/embedding_store.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace wildsort {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic{'F', 'S', 'E', 'M'};
constexpr std::uint32_t kRawVersion = 1;

std::string row_context(std::size_t row) { return "row " + std::to_string(row); }

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (quoted) {
        throw Error("csv line " + std::to_string(line_no) + ": unterminated quoted field");
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

double parse_double(const std::string& text, std::size_t row) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    while (first < last && *first == ' ') ++first;
    if (first < last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw Error(row_context(row) + ": cannot parse value '" + text + "'");
    }
    if (!std::isfinite(v)) {
        throw Error(row_context(row) + ": non-finite value '" + text + "'");
    }
    return v;
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) {
        throw Error("cannot open '" + path.string() + "' for reading");
    }
    return in;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) {
        throw Error("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

// Row vectors are collected first so the dimension check can name the row.
struct RowCollector {
    std::vector<ItemRecord> items;
    std::vector<double> values;
    std::size_t d = 0;

    void add(ItemRecord item, const std::vector<double>& vec) {
        const std::size_t row = items.size();
        if (vec.empty()) {
            throw Error(row_context(row) + ": empty vector");
        }
        if (row == 0) {
            d = vec.size();
        } else if (vec.size() != d) {
            throw Error(row_context(row) + ": dimension mismatch (expected " + std::to_string(d) +
                        ", got " + std::to_string(vec.size()) + ")");
        }
        items.push_back(std::move(item));
        values.insert(values.end(), vec.begin(), vec.end());
    }

    EmbeddingMatrix finish(const fs::path& path) {
        if (items.empty()) {
            throw Error("'" + path.string() + "' contains no rows");
        }
        RowMatrix m(static_cast<Eigen::Index>(items.size()), static_cast<Eigen::Index>(d));
        std::memcpy(m.data(), values.data(), values.size() * sizeof(double));
        return EmbeddingMatrix(std::move(items), std::move(m));
    }
};

EmbeddingMatrix load_csv(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw Error("'" + path.string() + "': missing csv header");
    }
    const auto header = split_csv_line(line, 1);
    if (header.size() < 3 || header[0] != "item_id" || header[1] != "label") {
        throw Error("'" + path.string() + "': csv header must start with item_id,label");
    }
    std::size_t first_dim = 2;
    const bool has_crop = header[2] == "crop_ref";
    if (has_crop) first_dim = 3;
    for (std::size_t c = first_dim; c < header.size(); ++c) {
        if (header[c] != "dim_" + std::to_string(c - first_dim)) {
            throw Error("'" + path.string() + "': unexpected csv column '" + header[c] + "'");
        }
    }
    const std::size_t d = header.size() - first_dim;

    RowCollector rows;
    std::size_t line_no = 1;
    std::vector<double> vec;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::size_t row = rows.items.size();
        auto fields = split_csv_line(line, line_no);
        if (fields.size() != header.size()) {
            throw Error(row_context(row) + ": dimension mismatch (expected " + std::to_string(d) +
                        " values, got " +
                        std::to_string(fields.size() >= first_dim ? fields.size() - first_dim : 0) + ")");
        }
        ItemRecord item;
        item.id = fields[0];
        if (!fields[1].empty()) item.label = fields[1];
        if (has_crop && !fields[2].empty()) item.crop_ref = fields[2];
        vec.clear();
        for (std::size_t c = first_dim; c < fields.size(); ++c) {
            vec.push_back(parse_double(fields[c], row));
        }
        rows.add(std::move(item), vec);
    }
    return rows.finish(path);
}

ItemRecord item_from_json(const json& obj, std::size_t row) {
    ItemRecord item;
    auto id = obj.find("id");
    if (id == obj.end()) id = obj.find("item_id");
    if (id == obj.end() || !id->is_string()) {
        throw Error(row_context(row) + ": missing string 'id'");
    }
    item.id = id->get<std::string>();
    if (auto l = obj.find("label"); l != obj.end() && !l->is_null()) {
        if (!l->is_string()) throw Error(row_context(row) + ": 'label' must be a string or null");
        item.label = l->get<std::string>();
    }
    if (auto c = obj.find("crop"); c != obj.end() && !c->is_null()) {
        if (!c->is_string()) throw Error(row_context(row) + ": 'crop' must be a string or null");
        item.crop_ref = c->get<std::string>();
    }
    return item;
}

json item_to_json(const ItemRecord& item) {
    json obj;
    obj["id"] = item.id;
    obj["label"] = item.label ? json(*item.label) : json(nullptr);
    if (item.crop_ref) obj["crop"] = *item.crop_ref;
    return obj;
}

template <typename Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
    auto in = open_in(path);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(row_context(row) + ": invalid JSON (" + e.what() + ")");
        }
        if (!obj.is_object()) throw Error(row_context(row) + ": expected a JSON object");
        fn(obj, row);
        ++row;
    }
}

EmbeddingMatrix load_jsonl(const fs::path& path) {
    RowCollector rows;
    std::vector<double> vec;
    for_each_json_line(path, [&](const json& obj, std::size_t row) {
        auto item = item_from_json(obj, row);
        auto v = obj.find("vec");
        if (v == obj.end() || !v->is_array()) throw Error(row_context(row) + ": missing array 'vec'");
        vec.clear();
        for (const auto& x : *v) {
            // JSON has no NaN literal; nulls are how serializers emit it.
            if (!x.is_number()) throw Error(row_context(row) + ": non-finite or non-numeric value in 'vec'");
            const double val = x.get<double>();
            if (!std::isfinite(val)) throw Error(row_context(row) + ": non-finite value in 'vec'");
            vec.push_back(val);
        }
        rows.add(std::move(item), vec);
    });
    return rows.finish(path);
}

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

EmbeddingMatrix load_rawf32(const fs::path& path) {
    auto in = open_in(path, true);
    unsigned char header[16];
    if (!in.read(reinterpret_cast<char*>(header), sizeof header)) {
        throw Error("'" + path.string() + "': truncated rawf32 header");
    }
    if (std::memcmp(header, kMagic.data(), kMagic.size()) != 0) {
        throw Error("'" + path.string() + "': bad magic, expected FSEM");
    }
    const auto version = read_u32_le(header + 4);
    if (version != kRawVersion) {
        throw Error("'" + path.string() + "': unsupported rawf32 version " + std::to_string(version));
    }
    const std::size_t n = read_u32_le(header + 8);
    const std::size_t d = read_u32_le(header + 12);
    if (n == 0 || d == 0) {
        throw Error("'" + path.string() + "': N and d must be positive");
    }
    std::vector<unsigned char> payload(n * d * 4);
    if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()))) {
        throw Error("'" + path.string() + "': truncated payload (expected " + std::to_string(n) + "x" +
                    std::to_string(d) + " floats)");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error("'" + path.string() + "': trailing bytes after payload");
    }
    RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const std::uint32_t bits = read_u32_le(payload.data() + 4 * (i * d + j));
            const float f = std::bit_cast<float>(bits);
            if (!std::isfinite(f)) {
                throw Error(row_context(i) + ": non-finite value at column " + std::to_string(j));
            }
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f;
        }
    }

    std::vector<ItemRecord> items;
    const auto sidecar = rawf32_sidecar_path(path);
    if (fs::exists(sidecar)) {
        for_each_json_line(sidecar, [&](const json& obj, std::size_t row) {
            items.push_back(item_from_json(obj, row));
        });
        if (items.size() != n) {
            throw Error("'" + sidecar.string() + "': " + std::to_string(items.size()) +
                        " records for " + std::to_string(n) + " rows");
        }
    } else {
        items.resize(n);
        for (std::size_t i = 0; i < n; ++i) items[i].id = std::to_string(i);
    }
    return EmbeddingMatrix(std::move(items), std::move(m));
}

void save_csv(const EmbeddingMatrix& m, const fs::path& path) {
    auto out = open_out(path);
    const bool has_crop = std::any_of(m.items().begin(), m.items().end(),
                                      [](const ItemRecord& r) { return r.crop_ref.has_value(); });
    out << "item_id,label";
    if (has_crop) out << ",crop_ref";
    for (std::size_t j = 0; j < m.d(); ++j) out << ",dim_" << j;
    out << '\n';
    const auto& v = m.vectors();
    for (std::size_t i = 0; i < m.n(); ++i) {
        const auto& item = m.items()[i];
        out << csv_escape(item.id) << ',' << csv_escape(item.label.value_or(""));
        if (has_crop) out << ',' << csv_escape(item.crop_ref.value_or(""));
        for (std::size_t j = 0; j < m.d(); ++j) {
            out << ',' << format_double(v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out << '\n';
    }
}

void save_jsonl(const EmbeddingMatrix& m, const fs::path& path) {
    auto out = open_out(path);
    const auto& v = m.vectors();
    for (std::size_t i = 0; i < m.n(); ++i) {
        json obj = item_to_json(m.items()[i]);
        std::vector<double> row(v.row(static_cast<Eigen::Index>(i)).begin(),
                                v.row(static_cast<Eigen::Index>(i)).end());
        obj["vec"] = row;
        out << obj.dump() << '\n';
    }
}

void save_rawf32(const EmbeddingMatrix& m, const fs::path& path) {
    if (m.n() > UINT32_MAX || m.d() > UINT32_MAX) {
        throw Error("matrix too large for rawf32");
    }
    {
        auto out = open_out(path, true);
        out.write(kMagic.data(), kMagic.size());
        write_u32_le(out, kRawVersion);
        write_u32_le(out, static_cast<std::uint32_t>(m.n()));
        write_u32_le(out, static_cast<std::uint32_t>(m.d()));
        const auto& v = m.vectors();
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v(i, j))));
            }
        }
    }
    auto side = open_out(rawf32_sidecar_path(path));
    for (const auto& item : m.items()) {
        side << item_to_json(item).dump() << '\n';
    }
}

} // namespace

Format parse_format(std::string_view name) {
    if (name == "csv") return Format::Csv;
    if (name == "jsonl") return Format::Jsonl;
    if (name == "rawf32" || name == "f32") return Format::RawF32;
    throw std::invalid_argument("unknown embedding format '" + std::string(name) + "'");
}

std::string_view format_name(Format f) {
    switch (f) {
    case Format::Csv: return "csv";
    case Format::Jsonl: return "jsonl";
    case Format::RawF32: return "rawf32";
    }
    return "?";
}

Format format_from_extension(const fs::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") return Format::Csv;
    if (ext == ".jsonl") return Format::Jsonl;
    if (ext == ".f32" || ext == ".bin" || ext == ".rawf32") return Format::RawF32;
    throw std::invalid_argument("cannot infer embedding format from '" + path.string() + "'");
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<ItemRecord> items, RowMatrix vectors)
    : items_(std::move(items)), vectors_(std::move(vectors)) {
    if (vectors_.rows() < 1 || vectors_.cols() < 1) {
        throw Error("embedding matrix needs N >= 1 and d >= 1");
    }
    if (items_.size() != static_cast<std::size_t>(vectors_.rows())) {
        throw Error("item count " + std::to_string(items_.size()) + " does not match row count " +
                    std::to_string(vectors_.rows()));
    }
    for (Eigen::Index i = 0; i < vectors_.rows(); ++i) {
        if (!vectors_.row(i).allFinite()) {
            throw Error(row_context(static_cast<std::size_t>(i)) + ": non-finite value");
        }
    }
    std::unordered_set<std::string> seen;
    seen.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (!seen.insert(items_[i].id).second) {
            throw Error(row_context(i) + ": duplicate item_id '" + items_[i].id + "'");
        }
    }
}

std::vector<std::string> EmbeddingMatrix::ids() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back(it.id);
    return out;
}

bool EmbeddingMatrix::has_all_labels() const {
    return std::all_of(items_.begin(), items_.end(), [](const ItemRecord& r) { return r.label.has_value(); });
}

bool EmbeddingMatrix::has_any_label() const {
    return std::any_of(items_.begin(), items_.end(), [](const ItemRecord& r) { return r.label.has_value(); });
}

std::vector<std::string> EmbeddingMatrix::labels() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (!items_[i].label) {
            throw Error(row_context(i) + " ('" + items_[i].id + "') is unlabeled");
        }
        out.push_back(*items_[i].label);
    }
    return out;
}

EmbeddingMatrix EmbeddingMatrix::with_vectors(RowMatrix vectors) const {
    return EmbeddingMatrix(items_, std::move(vectors));
}

EmbeddingMatrix EmbeddingMatrix::without_labels() const {
    auto items = items_;
    for (auto& it : items) it.label.reset();
    return EmbeddingMatrix(std::move(items), vectors_);
}

EmbeddingMatrix EmbeddingMatrix::select_rows(std::span<const std::size_t> rows) const {
    std::vector<ItemRecord> items;
    RowMatrix v(static_cast<Eigen::Index>(rows.size()), vectors_.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        items.push_back(items_.at(rows[r]));
        v.row(static_cast<Eigen::Index>(r)) = vectors_.row(static_cast<Eigen::Index>(rows[r]));
    }
    return EmbeddingMatrix(std::move(items), std::move(v));
}

EmbeddingMatrix load_embeddings(const fs::path& path, Format format) {
    if (!fs::exists(path)) {
        throw Error("input file '" + path.string() + "' does not exist");
    }
    switch (format) {
    case Format::Csv: return load_csv(path);
    case Format::Jsonl: return load_jsonl(path);
    case Format::RawF32: return load_rawf32(path);
    }
    throw std::invalid_argument("bad format");
}

void save_embeddings(const EmbeddingMatrix& m, const fs::path& path, Format format) {
    switch (format) {
    case Format::Csv: save_csv(m, path); return;
    case Format::Jsonl: save_jsonl(m, path); return;
    case Format::RawF32: save_rawf32(m, path); return;
    }
}

fs::path rawf32_sidecar_path(const fs::path& path) {
    auto p = path;
    p.replace_extension(".jsonl");
    return p;
}

std::vector<ItemRecord> read_label_file(const fs::path& path) {
    std::vector<ItemRecord> out;
    for_each_json_line(path, [&](const json& obj, std::size_t row) { out.push_back(item_from_json(obj, row)); });
    return out;
}

std::vector<ItemRecord> merge_labels(std::vector<ItemRecord> items, std::span<const ItemRecord> labels) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < items.size(); ++i) index.emplace(items[i].id, i);
    for (std::size_t row = 0; row < labels.size(); ++row) {
        const auto& rec = labels[row];
        auto it = index.find(rec.id);
        if (it == index.end()) {
            throw Error(row_context(row) + ": unknown item_id '" + rec.id + "' in label file");
        }
        if (rec.label) items[it->second].label = rec.label;
    }
    return items;
}

EmbeddingMatrix apply_label_file(const EmbeddingMatrix& m, const fs::path& path) {
    return EmbeddingMatrix(merge_labels(m.items(), read_label_file(path)), m.vectors());
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
    RowMatrix v = m.vectors();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double norm = v.row(i).norm();
        if (norm == 0.0) {
            throw Error(row_context(static_cast<std::size_t>(i)) + ": zero-norm vector cannot be normalized");
        }
        v.row(i) /= norm;
    }
    return m.with_vectors(std::move(v));
}

} // namespace wildsort
