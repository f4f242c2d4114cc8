#include "effectmod/csv.hpp"

#include <fstream>
#include <sstream>

#include "effectmod/errors.hpp"

namespace effectmod::csv {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == delim) {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

Table parse(const std::string& text, const std::string& origin) {
  Table table;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      table.header = split_line(line);
      if (table.header.empty() || (table.header.size() == 1 && table.header[0].empty()))
        throw InputError(origin + ": empty header row");
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != table.header.size())
      throw InputError(origin + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (line_no == 0) throw InputError(origin + ": file is empty");
  return table;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

namespace {

void append_field(std::string& out, const std::string& field) {
  if (field.find(',') != std::string::npos || field.find('"') != std::string::npos ||
      field.find('\n') != std::string::npos)
    throw InputError("field needs quoting, which this writer does not do: " + field);
  out += field;
}

void append_row(std::string& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i > 0) out += ',';
    append_field(out, row[i]);
  }
  out += '\n';
}

}  // namespace

std::string to_string(const Table& table) {
  std::string out;
  append_row(out, table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw InputError("row width does not match header");
    append_row(out, row);
  }
  return out;
}

void write_file(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << to_string(table);
  if (!out) throw InputError("write failed: " + path);
}

}  // namespace effectmod::csv
