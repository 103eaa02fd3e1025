#include "dcn/plotdata.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dcn {

PlotSection& PlotData::add(const std::string& name,
                           std::vector<std::string> columns) {
  sections.push_back(PlotSection{name, std::move(columns), Matrix()});
  return sections.back();
}

const PlotSection* PlotData::find(const std::string& name) const {
  for (const PlotSection& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void write_plot_data(std::ostream& out, const PlotData& data) {
  char buf[32];
  for (const PlotSection& s : data.sections) {
    out << "# section " << s.name << "\n";
    if (!s.columns.empty()) {
      out << "# columns:";
      for (const std::string& c : s.columns) out << " " << c;
      out << "\n";
    }
    for (Index i = 0; i < s.values.rows(); ++i) {
      for (Index j = 0; j < s.values.cols(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", s.values(i, j));
        out << (j > 0 ? " " : "") << buf;
      }
      out << "\n";
    }
  }
}

void write_plot_data(const std::string& path, const PlotData& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open plot file: " + path);
  write_plot_data(out, data);
  if (!out.good()) throw std::runtime_error("failed writing plot file: " + path);
}

PlotData read_plot_data(std::istream& in) {
  PlotData data;
  std::vector<std::vector<double>> rows;
  auto flush = [&rows, &data]() {
    if (data.sections.empty()) return;
    PlotSection& s = data.sections.back();
    s.values.resize(Index(rows.size()),
                    rows.empty() ? 0 : Index(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        s.values(Index(i), Index(j)) = rows[i][j];
      }
    }
    rows.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;  // blank line
    if (tok == "#") {
      std::string kind;
      ss >> kind;
      if (kind == "section") {
        flush();
        std::string name;
        ss >> name;
        if (name.empty()) throw std::runtime_error("plot section without name");
        data.add(name);
      } else if (kind == "columns:" && !data.sections.empty()) {
        std::string c;
        while (ss >> c) data.sections.back().columns.push_back(c);
      }
      continue;  // other comments are ignored
    }
    if (data.sections.empty()) {
      throw std::runtime_error("plot data before any section header");
    }
    std::vector<double> row;
    std::istringstream vals(line);
    double v;
    while (vals >> v) row.push_back(v);
    if (!vals.eof()) {
      throw std::runtime_error("non-numeric plot value in section " +
                               data.sections.back().name);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("ragged plot row in section " +
                               data.sections.back().name);
    }
    rows.push_back(std::move(row));
  }
  flush();
  return data;
}

PlotData read_plot_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open plot file: " + path);
  return read_plot_data(in);
}

}  // namespace dcn
