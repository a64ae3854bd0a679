#include <charconv>
#include <fstream>
#include <unordered_map>

#include "nhfm/data.hpp"
#include "nhfm/error.hpp"

namespace nhfm {

namespace {

std::vector<std::string_view> split_fields(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + delim.size();
  }
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

// Reads a "::"-delimited file, calling `handle` per non-empty line; lines for
// which it returns false count as malformed.
template <typename Handler>
IngestStats read_delimited(const std::filesystem::path& path, Handler handle) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  IngestStats stats;
  std::string line;
  while (std::getline(is, line)) {
    std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    ++stats.lines;
    if (!handle(split_fields(view, "::"))) ++stats.malformed;
  }
  if (stats.lines == 0) throw DataError(path.string() + " contains no records");
  if (stats.malformed * 100 > stats.lines) {
    throw DataError(path.string() + ": " + std::to_string(stats.malformed) + " of " +
                    std::to_string(stats.lines) + " lines malformed (> 1%)");
  }
  return stats;
}

struct Movie {
  std::string genre;
  std::string year;
};

struct User {
  std::string gender;
  std::string age;
  std::string occupation;
  std::string zip1;
};

std::string release_year(std::string_view title) {
  const std::size_t open = title.rfind('(');
  if (open == std::string_view::npos || open + 6 > title.size() || title[open + 5] != ')') {
    return {};
  }
  std::string_view year = title.substr(open + 1, 4);
  int value = 0;
  return parse_number(year, value) ? std::string(year) : std::string{};
}

}  // namespace

MovieLensFiles MovieLensFiles::in_directory(const std::filesystem::path& dir) {
  return {dir / "ratings.dat", dir / "users.dat", dir / "movies.dat"};
}

std::vector<FieldConfig> movielens_fields() {
  return {
      {"movie_id", FieldKind::kCategorical}, {"genre", FieldKind::kCategorical},
      {"year", FieldKind::kCategorical},     {"hour", FieldKind::kCategorical},
      {"weekday", FieldKind::kCategorical},  {"gender", FieldKind::kCategorical},
      {"age", FieldKind::kCategorical},      {"occupation", FieldKind::kCategorical},
      {"zip1", FieldKind::kCategorical},
  };
}

RecordTable ingest_movielens(const MovieLensFiles& files, IngestStats* stats) {
  std::unordered_map<long, Movie> movies;
  read_delimited(files.movies, [&](const std::vector<std::string_view>& f) {
    long id = 0;
    if (f.size() != 3 || !parse_number(f[0], id)) return false;
    std::string_view genres = f[2];
    Movie m;
    m.genre = std::string(genres.substr(0, genres.find('|')));
    m.year = release_year(f[1]);
    movies[id] = std::move(m);
    return true;
  });

  std::unordered_map<long, User> users;
  read_delimited(files.users, [&](const std::vector<std::string_view>& f) {
    long id = 0;
    if (f.size() != 5 || !parse_number(f[0], id) || f[4].empty()) return false;
    users[id] = User{std::string(f[1]), std::string(f[2]), std::string(f[3]),
                     std::string(f[4].substr(0, 1))};
    return true;
  });

  RecordTable table;
  for (const auto& fc : movielens_fields()) table.columns.push_back(fc.name);

  IngestStats rating_stats = read_delimited(files.ratings, [&](const std::vector<std::string_view>& f) {
    long uid = 0, mid = 0;
    int rating = 0;
    std::int64_t ts = 0;
    if (f.size() != 4 || !parse_number(f[0], uid) || !parse_number(f[1], mid) ||
        !parse_number(f[2], rating) || !parse_number(f[3], ts) || rating < 1 || rating > 5) {
      return false;
    }
    auto m = movies.find(mid);
    auto u = users.find(uid);
    if (m == movies.end() || u == users.end()) return false;

    RawRecord rec;
    rec.user = std::string(f[0]);
    rec.timestamp = ts;
    rec.label = rating >= 4 ? 1 : 0;
    const std::int64_t hour = (ts / 3600) % 24;
    const std::int64_t weekday = (ts / 86400 + 4) % 7;  // 0 = Sunday
    rec.values.reserve(9);
    rec.values.emplace_back(std::string(f[1]));
    rec.values.emplace_back(m->second.genre);
    if (m->second.year.empty()) {
      rec.values.emplace_back(std::monostate{});
    } else {
      rec.values.emplace_back(m->second.year);
    }
    rec.values.emplace_back(std::to_string(hour));
    rec.values.emplace_back(std::to_string(weekday));
    rec.values.emplace_back(u->second.gender);
    rec.values.emplace_back(u->second.age);
    rec.values.emplace_back(u->second.occupation);
    rec.values.emplace_back(u->second.zip1);
    table.rows.push_back(std::move(rec));
    return true;
  });
  if (stats) *stats = rating_stats;
  return table;
}

RecordTable read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  RecordTable table;
  std::unordered_map<std::string, std::size_t> column_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("__user") || !j.contains("__label")) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": record needs __user and __label");
    }
    RawRecord rec;
    rec.user = j["__user"].is_string() ? j["__user"].get<std::string>() : j["__user"].dump();
    rec.timestamp = j.value("__ts", std::int64_t{0});
    rec.label = j["__label"].get<int>() != 0 ? 1 : 0;
    rec.values.resize(table.columns.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key().rfind("__", 0) == 0) continue;
      auto [pos, inserted] = column_of.emplace(it.key(), table.columns.size());
      if (inserted) {
        table.columns.push_back(it.key());
        rec.values.resize(table.columns.size());
      }
      if (it->is_string()) {
        rec.values[pos->second] = it->get<std::string>();
      } else if (it->is_number()) {
        rec.values[pos->second] = it->get<double>();
      } else if (it->is_boolean()) {
        rec.values[pos->second] = std::string(it->get<bool>() ? "true" : "false");
      }
    }
    table.rows.push_back(std::move(rec));
  }
  for (auto& rec : table.rows) rec.values.resize(table.columns.size());
  return table;
}

}  // namespace nhfm
