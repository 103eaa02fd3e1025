#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dcn/types.hpp"

namespace dcn {

// One dataset of a plain-text plot file: a "# section <name>" header, an
// optional "# columns: ..." comment, then whitespace-separated float rows.
struct PlotSection {
  std::string name;
  std::vector<std::string> columns;
  Matrix values;
};

struct PlotData {
  std::vector<PlotSection> sections;

  PlotSection& add(const std::string& name,
                   std::vector<std::string> columns = {});
  const PlotSection* find(const std::string& name) const;
};

void write_plot_data(std::ostream& out, const PlotData& data);
void write_plot_data(const std::string& path, const PlotData& data);

PlotData read_plot_data(std::istream& in);
PlotData read_plot_data(const std::string& path);

}  // namespace dcn
