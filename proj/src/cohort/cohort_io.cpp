#include "duacm/cohort_io.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace duacm::cohort {
namespace {

constexpr std::string_view kMagic = "#duacm-cohort";
constexpr std::string_view kVersion = "1";

void write_reals(std::ostream& out, const std::vector<double>& values, char sep) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << sep;
    out << format_real(values[i]);
  }
}

void check_name(const std::string& name, const char* what) {
  if (name.empty() || name.find_first_of("\t\n\r,") != std::string::npos) {
    throw SchemaError(std::string("invalid ") + what + " name '" + name +
                      "' (empty or contains a tab, comma or newline)");
  }
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++number_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("cohort file line " + std::to_string(number_) + ": " + what);
  }

  std::size_t number() const { return number_; }

 private:
  std::istream& in_;
  std::size_t number_ = 0;
};

std::vector<std::string_view> header_fields(LineReader& reader, std::string& line,
                                            std::string_view key) {
  if (!reader.next(line)) reader.fail("unexpected end of file, expected " + std::string(key));
  auto fields = split_view(line, '\t');
  if (fields.front() != key) {
    reader.fail("expected header '" + std::string(key) + "', found '" +
                std::string(fields.front()) + "'");
  }
  fields.erase(fields.begin());
  return fields;
}

std::vector<double> parse_reals(LineReader& reader, std::string_view text, char sep,
                                const char* what) {
  std::vector<double> values;
  if (text.empty()) return values;
  for (auto field : split_view(text, sep)) {
    auto v = parse_real(field);
    if (!v) reader.fail(std::string("malformed ") + what + " value '" + std::string(field) + "'");
    values.push_back(*v);
  }
  return values;
}

}  // namespace

void write_cohort(std::ostream& out, const Cohort& cohort) {
  cohort.validate();
  out << kMagic << '\t' << kVersion << '\n';
  out << "#features";
  for (const auto& name : cohort.schema.names) {
    check_name(name, "feature");
    out << '\t' << name;
  }
  out << "\n#min";
  for (double v : cohort.schema.min_values) out << '\t' << format_real(v);
  out << "\n#max";
  for (double v : cohort.schema.max_values) out << '\t' << format_real(v);
  out << "\n#diagnoses";
  for (const auto& name : cohort.diagnosis_vocab) {
    check_name(name, "diagnosis");
    out << '\t' << name;
  }
  const std::size_t latent_dim =
      cohort.records.empty() ? 0 : cohort.records.front().latent_state.size();
  out << "\n#latent_dim\t" << latent_dim << "\n#records\t" << cohort.records.size() << '\n';
  for (const auto& r : cohort.records) {
    check_name(r.id, "record id");
    if (r.latent_state.size() != latent_dim) {
      throw SchemaError("record " + r.id + " latent state length differs from the cohort");
    }
    out << r.id << '\t';
    write_reals(out, r.features, ',');
    out << '\t';
    if (r.diagnosis) out << cohort.diagnosis_vocab[*r.diagnosis];
    out << '\t' << r.outcome << '\t';
    write_reals(out, r.latent_state, ',');
    out << '\n';
  }
}

Cohort read_cohort(std::istream& in) {
  LineReader reader(in);
  std::string line;
  if (!reader.next(line)) reader.fail("empty file");
  {
    auto fields = split_view(line, '\t');
    if (fields.size() != 2 || fields[0] != kMagic) reader.fail("not a cohort file");
    if (fields[1] != kVersion) reader.fail("unsupported version " + std::string(fields[1]));
  }
  Cohort cohort;
  for (auto f : header_fields(reader, line, "#features")) cohort.schema.names.emplace_back(f);
  const std::size_t p = cohort.schema.names.size();
  auto read_range = [&](std::string_view key) {
    std::vector<double> values;
    for (auto f : header_fields(reader, line, key)) {
      auto v = parse_real(f);
      if (!v) reader.fail("malformed range value '" + std::string(f) + "'");
      values.push_back(*v);
    }
    if (values.size() != p) reader.fail(std::string(key) + " has wrong number of entries");
    return values;
  };
  cohort.schema.min_values = read_range("#min");
  cohort.schema.max_values = read_range("#max");
  std::unordered_map<std::string, DiagnosisId> vocab_index;
  for (auto f : header_fields(reader, line, "#diagnoses")) {
    vocab_index.emplace(std::string(f), static_cast<DiagnosisId>(cohort.diagnosis_vocab.size()));
    cohort.diagnosis_vocab.emplace_back(f);
  }
  auto read_count = [&](std::string_view key) {
    auto fields = header_fields(reader, line, key);
    if (fields.size() != 1) reader.fail(std::string(key) + " expects one value");
    auto v = parse_integer(fields[0]);
    if (!v || *v < 0) reader.fail(std::string(key) + " is not a count");
    return static_cast<std::size_t>(*v);
  };
  const std::size_t latent_dim = read_count("#latent_dim");
  const std::size_t n_records = read_count("#records");

  cohort.records.reserve(n_records);
  while (reader.next(line)) {
    if (line.empty()) continue;
    const std::size_t index = cohort.records.size();
    auto fields = split_view(line, '\t');
    if (fields.size() != 5) {
      reader.fail("record " + std::to_string(index) + " has " + std::to_string(fields.size()) +
                  " fields, expected 5");
    }
    PatientRecord r;
    r.id = std::string(fields[0]);
    r.features = parse_reals(reader, fields[1], ',', "feature");
    if (r.features.size() != p) {
      throw SchemaError("record " + std::to_string(index) + " (" + r.id + ") has " +
                        std::to_string(r.features.size()) + " features, schema has " +
                        std::to_string(p));
    }
    if (!fields[2].empty()) {
      auto it = vocab_index.find(std::string(fields[2]));
      if (it == vocab_index.end()) {
        throw SchemaError("record " + std::to_string(index) + " (" + r.id +
                          "): diagnosis '" + std::string(fields[2]) + "' not in vocabulary");
      }
      r.diagnosis = it->second;
    }
    if (fields[3] == "0") {
      r.outcome = 0;
    } else if (fields[3] == "1") {
      r.outcome = 1;
    } else {
      reader.fail("record " + std::to_string(index) + " outcome must be 0 or 1");
    }
    r.latent_state = parse_reals(reader, fields[4], ',', "latent");
    if (r.latent_state.size() != latent_dim) {
      throw SchemaError("record " + std::to_string(index) + " (" + r.id +
                        ") latent state length does not match #latent_dim");
    }
    cohort.records.push_back(std::move(r));
  }
  if (cohort.records.size() != n_records) {
    throw ParseError("cohort file declares " + std::to_string(n_records) + " records but has " +
                     std::to_string(cohort.records.size()));
  }
  cohort.validate();
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  std::ostringstream out;
  write_cohort(out, cohort);
  write_file_atomically(path, out.str());
}

Cohort load_cohort(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return read_cohort(in);
}

}  // namespace duacm::cohort
