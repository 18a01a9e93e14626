#include "reenact/config.hpp"

#include <fstream>
#include <sstream>

#include "reenact/error.hpp"

namespace reenact {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

nlohmann::json parse_value(std::string_view raw) {
  const auto text = std::string(trim(raw));
  auto v = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return text;
  return v;
}

void set_path(nlohmann::json& root, std::string_view key, nlohmann::json value,
              const std::string& where) {
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = std::string(key.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (part.empty()) fail(ErrorKind::config, where + ": empty key segment in '" + std::string(key) + "'");
    if (!node->is_object()) {
      fail(ErrorKind::config, where + ": '" + std::string(key) + "' conflicts with a scalar key");
    }
    if (dot == std::string_view::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

// First '#' outside a double-quoted string.
std::size_t comment_start(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return i;
  }
  return line.size();
}

void flatten(const nlohmann::json& j, const std::string& prefix, std::ostringstream& out) {
  for (const auto& [k, v] : j.items()) {
    const auto key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, key, out);
    } else {
      out << key << " = " << v.dump() << '\n';
    }
  }
}

}  // namespace

nlohmann::json parse_flat_config(std::string_view text, const std::string& origin) {
  nlohmann::json root = nlohmann::json::object();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    line = line.substr(0, comment_start(line));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) fail(ErrorKind::config, where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorKind::config, where + ": missing key");
    set_path(root, key, parse_value(line.substr(eq + 1)), where);
  }
  return root;
}

nlohmann::json read_flat_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_flat_config(buf.str(), path.string());
}

void apply_override(nlohmann::json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    fail(ErrorKind::config, "override '" + std::string(assignment) + "' is not key=value");
  }
  const auto key = trim(assignment.substr(0, eq));
  if (key.empty()) fail(ErrorKind::config, "override '" + std::string(assignment) + "' has no key");
  set_path(config, key, parse_value(assignment.substr(eq + 1)), "--set");
}

std::string format_flat_config(const nlohmann::json& config) {
  std::ostringstream out;
  flatten(config, "", out);
  return out.str();
}

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                const std::string& context) {
  if (j.is_null()) return;
  if (!j.is_object()) fail(ErrorKind::config, context + " must be a key/value section");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == k;
    if (!known) fail(ErrorKind::config, "unknown config key '" + context + "." + k + "'");
  }
}

nlohmann::json section_of(const nlohmann::json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nlohmann::json::object();
  if (!it->is_object()) fail(ErrorKind::config, "config key '" + key + "' must be a section");
  return *it;
}

}  // namespace reenact
