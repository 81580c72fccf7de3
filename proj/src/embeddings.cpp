#include "hallu/embeddings.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "hallu/errors.hpp"
#include "hallu/json_io.hpp"

namespace hallu {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(b)]) << (8 * b);
  return v;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

void EmbeddingMatrix::validate() const {
  if (!data.allFinite()) throw InputError("embedding matrix has non-finite entries");
  if (labels.size() != rows()) throw InputError("label count does not match embedding rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes.size()) throw InputError("label outside the declared class set");
  }
}

std::vector<std::size_t> EmbeddingMatrix::rows_of(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == c) out.push_back(r);
  }
  return out;
}

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<std::size_t>& rows) const {
  EmbeddingMatrix out;
  out.classes = classes;
  out.source = source;
  out.data.resize(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.data.row(static_cast<Eigen::Index>(k)) = data.row(static_cast<Eigen::Index>(rows[k]));
    out.labels.push_back(labels[rows[k]]);
  }
  return out;
}

std::vector<std::uint8_t> encode_emb1(const Matrix& data) {
  std::vector<std::uint8_t> out(kEmb1Magic.begin(), kEmb1Magic.end());
  put_u32(out, static_cast<std::uint32_t>(data.rows()));
  put_u32(out, static_cast<std::uint32_t>(data.cols()));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(data.size()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(data(r, c))));
    }
  }
  return out;
}

Matrix decode_emb1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || !std::equal(kEmb1Magic.begin(), kEmb1Magic.end(), bytes.begin())) {
    throw InputError("not an EMB1 file (bad magic)");
  }
  const std::uint32_t rows = get_u32(bytes, 4);
  const std::uint32_t cols = get_u32(bytes, 8);
  const std::size_t expected = 12 + 4 * static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != expected) {
    throw InputError("EMB1 payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                     std::to_string(expected));
  }
  Matrix data(rows, cols);
  std::size_t at = 12;
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c, at += 4) data(r, c) = std::bit_cast<float>(get_u32(bytes, at));
  }
  return data;
}

void write_emb1(const std::string& path, const Matrix& data) {
  const auto bytes = encode_emb1(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Matrix read_emb1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_emb1(bytes);
}

void write_manifest(const std::string& path, const EmbeddingMatrix& matrix) {
  write_json_file(path, Json{{"classes", matrix.classes}, {"labels", matrix.labels}, {"source", matrix.source}});
}

EmbeddingMatrix load_emb1_with_manifest(const std::string& emb_path, const std::string& manifest_path) {
  EmbeddingMatrix m;
  m.data = read_emb1(emb_path);
  m.source = emb_path;
  if (manifest_path.empty()) {
    m.classes = {"unlabeled"};
    m.labels.assign(m.rows(), 0);
  } else {
    const Json j = read_json_file(manifest_path);
    m.classes = required<std::vector<std::string>>(j, "classes");
    m.labels = required<std::vector<int>>(j, "labels");
    if (j.contains("source") && j.at("source").is_string()) m.source = j.at("source").get<std::string>();
  }
  m.validate();
  return m;
}

EmbeddingMatrix load_embedding_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError("embedding CSV is empty");
  EmbeddingMatrix m;
  m.source = path;
  std::map<std::string, int> class_index;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    const std::string name = trim(cell);
    auto [it, inserted] = class_index.emplace(name, static_cast<int>(m.classes.size()));
    if (inserted) m.classes.push_back(name);
    m.labels.push_back(it->second);
    std::vector<double> values;
    while (std::getline(cells, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InputError("embedding CSV has a non-numeric value: " + cell);
      }
    }
    if (!rows.empty() && values.size() != rows.front().size()) throw InputError("embedding CSV rows differ in length");
    rows.push_back(std::move(values));
  }
  if (rows.empty() || rows.front().empty()) throw InputError("embedding CSV has no data");
  m.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  m.validate();
  return m;
}

std::string embedding_csv(const EmbeddingMatrix& matrix) {
  std::ostringstream out;
  out.precision(17);
  out << "label";
  for (Eigen::Index c = 0; c < matrix.data.cols(); ++c) out << ",x" << c;
  out << '\n';
  for (Eigen::Index r = 0; r < matrix.data.rows(); ++r) {
    out << matrix.classes[static_cast<std::size_t>(matrix.labels[static_cast<std::size_t>(r)])];
    for (Eigen::Index c = 0; c < matrix.data.cols(); ++c) out << ',' << matrix.data(r, c);
    out << '\n';
  }
  return out.str();
}

}  // namespace hallu
