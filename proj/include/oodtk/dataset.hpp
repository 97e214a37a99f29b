#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "oodtk/common.hpp"
#include "oodtk/schema.hpp"

namespace oodtk {

namespace csv {

/// RFC 4180 reader: quoted fields may contain commas, doubled quotes and
/// newlines. Returns one vector of fields per record.
inline std::vector<std::vector<std::string>> parse(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < n) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field += '"';
          i += 2;
        } else {
          in_quotes = false;
          ++i;
        }
      } else {
        field += c;
        ++i;
      }
    } else {
      if (c == '"' && !field_started && field.empty()) {
        in_quotes = true;
        field_started = true;
        ++i;
      } else if (c == ',') {
        end_field();
        ++i;
      } else if (c == '\r') {
        ++i;  // swallow; \r\n handled by the \n branch
      } else if (c == '\n') {
        end_row();
        ++i;
      } else {
        field += c;
        field_started = true;
        ++i;
      }
    }
  }
  if (in_quotes) throw Error("csv: unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

inline std::string quote_field(const std::string& s) {
  const bool needs = s.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace csv

/// Validated tabular data. Values are stored column-wise: continuous features
/// as dense doubles, categoricals as level indices into the schema's declared
/// level list. Immutable after construction.
class Dataset {
 public:
  Dataset() = default;

  Dataset(FeatureSchema schema, std::vector<std::string> row_ids,
          std::vector<Eigen::VectorXd> cont_cols,
          std::vector<std::vector<int>> cat_cols)
      : schema_(std::move(schema)),
        row_ids_(std::move(row_ids)),
        cont_cols_(std::move(cont_cols)),
        cat_cols_(std::move(cat_cols)) {
    build_slots();
    validate();
  }

  const FeatureSchema& schema() const { return schema_; }
  std::size_t n_rows() const { return row_ids_.size(); }
  const std::vector<std::string>& row_ids() const { return row_ids_; }

  double continuous_value(std::size_t row, std::size_t feature) const {
    return cont_cols_[slot_[feature]](static_cast<Eigen::Index>(row));
  }

  int categorical_index(std::size_t row, std::size_t feature) const {
    return cat_cols_[slot_[feature]][row];
  }

  const std::string& categorical_level(std::size_t row, std::size_t feature) const {
    return schema_.at(feature).levels[categorical_index(row, feature)];
  }

  const Eigen::VectorXd& continuous_column(std::size_t feature) const {
    detail::require(schema_.at(feature).is_continuous(), "continuous_column on categorical feature");
    return cont_cols_[slot_[feature]];
  }

  /// Same rows, a subset of features (by feature index, in the given order).
  Dataset project(const std::vector<std::size_t>& features) const {
    std::vector<Feature> feats;
    for (auto f : features) feats.push_back(schema_.at(f));
    FeatureSchema sub_schema(feats);
    std::vector<Eigen::VectorXd> cc;
    std::vector<std::vector<int>> kc;
    for (auto f : features) {
      if (schema_.at(f).is_continuous()) cc.push_back(cont_cols_[slot_[f]]);
      else kc.push_back(cat_cols_[slot_[f]]);
    }
    return Dataset(std::move(sub_schema), row_ids_, std::move(cc), std::move(kc));
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (auto r : rows) ids.push_back(row_ids_[r]);
    std::vector<Eigen::VectorXd> cc;
    for (const auto& col : cont_cols_) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) v(static_cast<Eigen::Index>(i)) = col(static_cast<Eigen::Index>(rows[i]));
      cc.push_back(std::move(v));
    }
    std::vector<std::vector<int>> kc;
    for (const auto& col : cat_cols_) {
      std::vector<int> v;
      v.reserve(rows.size());
      for (auto r : rows) v.push_back(col[r]);
      kc.push_back(std::move(v));
    }
    return Dataset(schema_, std::move(ids), std::move(cc), std::move(kc));
  }

  /// Stable fingerprint over ids and values; used in report metadata.
  std::string content_hash() const {
    Fnv1a h;
    for (const auto& id : row_ids_) {
      h.update(id);
      h.update("\x1f", 1);
    }
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      h.update(schema_.at(f).name);
      if (schema_.at(f).is_continuous()) {
        const auto& col = cont_cols_[slot_[f]];
        h.update(col.data(), sizeof(double) * static_cast<std::size_t>(col.size()));
      } else {
        const auto& col = cat_cols_[slot_[f]];
        h.update(col.data(), sizeof(int) * col.size());
      }
    }
    return h.hex();
  }

  void save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    detail::require(out.good(), "dataset: cannot write '" + path + "'");
    out << "id";
    for (const auto& f : schema_.features()) out << "," << csv::quote_field(f.name);
    out << "\n";
    for (std::size_t r = 0; r < n_rows(); ++r) {
      out << csv::quote_field(row_ids_[r]);
      for (std::size_t f = 0; f < schema_.size(); ++f) {
        out << ",";
        if (schema_.at(f).is_continuous()) {
          out << format_double(continuous_value(r, f));
        } else {
          out << csv::quote_field(categorical_level(r, f));
        }
      }
      out << "\n";
    }
  }

 private:
  void build_slots() {
    slot_.assign(schema_.size(), 0);
    std::size_t ci = 0, ki = 0;
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      slot_[f] = schema_.at(f).is_continuous() ? ci++ : ki++;
    }
    detail::require(cont_cols_.size() == ci && cat_cols_.size() == ki,
                    "dataset: column count does not match schema");
  }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(n_rows());
    for (const auto& col : cont_cols_) {
      detail::require(col.size() == n, "dataset: ragged continuous column");
    }
    for (const auto& col : cat_cols_) {
      detail::require(col.size() == n_rows(), "dataset: ragged categorical column");
    }
    std::set<std::string> seen;
    for (const auto& id : row_ids_) {
      detail::require(seen.insert(id).second, "dataset: duplicate row id '" + id + "'");
    }
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (!schema_.at(f).is_continuous()) {
        const int n_levels = static_cast<int>(schema_.at(f).levels.size());
        for (int idx : cat_cols_[slot_[f]]) {
          detail::require(idx >= 0 && idx < n_levels,
                          "dataset: level index out of range in '" + schema_.at(f).name + "'");
        }
      }
    }
  }

  FeatureSchema schema_;
  std::vector<std::string> row_ids_;
  std::vector<Eigen::VectorXd> cont_cols_;
  std::vector<std::vector<int>> cat_cols_;
  std::vector<std::size_t> slot_;  // feature index -> position in its column family
};

/// Row-oriented builder used by the CSV loader and the synthetic generator.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(FeatureSchema schema) : schema_(std::move(schema)) {
    for (const auto& f : schema_.features()) {
      if (f.is_continuous()) cont_data_.emplace_back();
      else cat_data_.emplace_back();
    }
    std::size_t ci = 0, ki = 0;
    for (const auto& f : schema_.features()) {
      slot_.push_back(f.is_continuous() ? ci++ : ki++);
    }
  }

  void add_row(std::string id, const std::vector<std::variant<double, std::string>>& values) {
    detail::require(values.size() == schema_.size(), "dataset: row width mismatch");
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      const auto& feat = schema_.at(f);
      if (feat.is_continuous()) {
        cont_data_[slot_[f]].push_back(std::get<double>(values[f]));
      } else {
        const auto& level = std::get<std::string>(values[f]);
        const int idx = feat.level_index(level);
        detail::require(idx >= 0, "dataset: level '" + level + "' not declared for '" + feat.name + "'");
        cat_data_[slot_[f]].push_back(idx);
      }
    }
    row_ids_.push_back(std::move(id));
  }

  void add_continuous(std::size_t feature, double v) { cont_data_[slot_[feature]].push_back(v); }
  void add_categorical(std::size_t feature, int level_idx) { cat_data_[slot_[feature]].push_back(level_idx); }
  void add_row_id(std::string id) { row_ids_.push_back(std::move(id)); }

  Dataset build() {
    std::vector<Eigen::VectorXd> cc;
    for (auto& col : cont_data_) {
      cc.push_back(Eigen::Map<Eigen::VectorXd>(col.data(), static_cast<Eigen::Index>(col.size())));
    }
    return Dataset(schema_, std::move(row_ids_), std::move(cc), std::move(cat_data_));
  }

 private:
  FeatureSchema schema_;
  std::vector<std::string> row_ids_;
  std::vector<std::vector<double>> cont_data_;
  std::vector<std::vector<int>> cat_data_;
  std::vector<std::size_t> slot_;
};

/// Loads and validates a CSV against a schema. The header must contain
/// exactly the schema's feature names, plus an optional `id` column. Errors
/// name the offending row and column.
inline Dataset load_dataset(const std::string& csv_path, const FeatureSchema& schema) {
  std::ifstream in(csv_path, std::ios::binary);
  detail::require(in.good(), "dataset: cannot open '" + csv_path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto records = csv::parse(text);
  detail::require(!records.empty(), "dataset: '" + csv_path + "' is empty");

  const auto& header = records[0];
  int id_col = -1;
  std::vector<int> feature_of_col(header.size(), -1);
  std::vector<bool> feature_seen(schema.size(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "id") {
      detail::require(id_col < 0, "dataset: duplicate 'id' column");
      id_col = static_cast<int>(c);
      continue;
    }
    const int f = schema.index_of(header[c]);
    if (f < 0) throw Error("dataset: unknown column '" + header[c] + "'");
    detail::require(!feature_seen[f], "dataset: duplicate column '" + header[c] + "'");
    feature_seen[f] = true;
    feature_of_col[c] = f;
  }
  for (std::size_t f = 0; f < schema.size(); ++f) {
    detail::require(feature_seen[f], "dataset: missing column '" + schema.at(f).name + "'");
  }

  DatasetBuilder builder(schema);
  std::vector<std::variant<double, std::string>> row(schema.size());
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    detail::require(rec.size() == header.size(),
                    "dataset: row " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                        " fields, expected " + std::to_string(header.size()));
    std::string id = id_col >= 0 ? rec[id_col] : std::to_string(r - 1);
    for (std::size_t c = 0; c < rec.size(); ++c) {
      const int f = feature_of_col[c];
      if (f < 0) continue;
      const auto& feat = schema.at(static_cast<std::size_t>(f));
      const std::string& cell = rec[c];
      const std::string where = "row " + std::to_string(r) + ", column " + feat.name;
      detail::require(!cell.empty(), "dataset: " + where + ": missing value");
      if (feat.is_continuous()) {
        row[f] = parse_double(cell, "dataset: " + where);
      } else {
        if (feat.level_index(cell) < 0) {
          std::string levels;
          for (const auto& lv : feat.levels) {
            if (!levels.empty()) levels += ",";
            levels += lv;
          }
          throw Error("dataset: " + where + ": level '" + cell + "' not in {" + levels + "}");
        }
        row[f] = cell;
      }
    }
    builder.add_row(std::move(id), row);
  }
  return builder.build();
}

inline Dataset load_dataset(const std::string& csv_path, const std::string& schema_path) {
  return load_dataset(csv_path, FeatureSchema::load(schema_path));
}

}  // namespace oodtk
