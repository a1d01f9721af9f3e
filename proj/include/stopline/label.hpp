#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stopline {

/// Ulam-Harris label: the sequence of child indices leading from the
/// founding particle to this one. The empty sequence is the mother particle.
class Label {
public:
  using Index = std::uint32_t;

  Label() = default;
  explicit Label(std::vector<Index> path) : path_(std::move(path)) {}
  Label(std::initializer_list<Index> path) : path_(path) {}

  [[nodiscard]] std::span<const Index> path() const noexcept { return path_; }
  [[nodiscard]] std::size_t generation() const noexcept { return path_.size(); }
  [[nodiscard]] bool is_root() const noexcept { return path_.empty(); }

  [[nodiscard]] Label parent() const {
    if (path_.empty())
      throw std::domain_error("Label: the root label has no parent");
    return Label(std::vector<Index>(path_.begin(), path_.end() - 1));
  }

  [[nodiscard]] Label child(Index k) const {
    auto p = path_;
    p.push_back(k);
    return Label(std::move(p));
  }

  /// "∅" for the root, otherwise dot-separated indices ("1.2.0").
  [[nodiscard]] std::string to_string() const {
    if (path_.empty())
      return "∅";
    std::string out;
    for (std::size_t i = 0; i < path_.size(); ++i) {
      if (i)
        out.push_back('.');
      out += std::to_string(path_[i]);
    }
    return out;
  }

  static Label parse(std::string_view text) {
    if (text.empty() || text == "∅" || text == "root")
      return {};
    std::vector<Index> p;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto dot = text.find('.', pos);
      const auto tok = text.substr(pos, dot == std::string_view::npos ? text.npos : dot - pos);
      if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw std::invalid_argument("Label: malformed label '" + std::string(text) + "'");
      p.push_back(static_cast<Index>(std::stoul(std::string(tok))));
      if (dot == std::string_view::npos)
        break;
      pos = dot + 1;
    }
    return Label(std::move(p));
  }

  friend bool operator==(const Label&, const Label&) = default;
  friend std::strong_ordering operator<=>(const Label& a, const Label& b) {
    return std::lexicographical_compare_three_way(a.path_.begin(), a.path_.end(), b.path_.begin(),
                                                  b.path_.end());
  }

private:
  std::vector<Index> path_;
};

inline Label concat(const Label& i, const Label& j) {
  std::vector<Label::Index> p(i.path().begin(), i.path().end());
  p.insert(p.end(), j.path().begin(), j.path().end());
  return Label(std::move(p));
}

/// True iff `descendant` = `ancestor` followed by a nonempty suffix.
inline bool is_strict_ancestor(const Label& ancestor, const Label& descendant) {
  const auto a = ancestor.path();
  const auto d = descendant.path();
  return a.size() < d.size() && std::equal(a.begin(), a.end(), d.begin());
}

inline bool is_ancestor_or_self(const Label& ancestor, const Label& descendant) {
  return ancestor == descendant || is_strict_ancestor(ancestor, descendant);
}

inline std::size_t common_prefix_length(const Label& i, const Label& j) {
  const auto a = i.path();
  const auto b = j.path();
  const auto n = std::min(a.size(), b.size());
  std::size_t p = 0;
  while (p < n && a[p] == b[p])
    ++p;
  return p;
}

/// Tree distance: sum of (index + 1) over both branches below the greatest
/// common ancestor.
inline std::uint64_t ulam_distance(const Label& i, const Label& j) {
  const auto p = common_prefix_length(i, j);
  std::uint64_t d = 0;
  for (auto it = i.path().begin() + static_cast<std::ptrdiff_t>(p); it != i.path().end(); ++it)
    d += std::uint64_t{*it} + 1;
  for (auto it = j.path().begin() + static_cast<std::ptrdiff_t>(p); it != j.path().end(); ++it)
    d += std::uint64_t{*it} + 1;
  return d;
}

/// Distance to the root. Not the same as generation(): child index k adds k+1.
inline std::uint64_t ulam_norm(const Label& i) { return ulam_distance(i, Label{}); }

/// True iff no label in the set is a strict ancestor of another.
/// Sorting lexicographically places every descendant of p directly after p
/// or after another descendant of p, so adjacent pairs suffice.
inline bool is_antichain(std::vector<Label> labels) {
  std::sort(labels.begin(), labels.end());
  for (std::size_t k = 1; k < labels.size(); ++k)
    if (is_ancestor_or_self(labels[k - 1], labels[k]))
      return false;
  return true;
}

struct LabelHash {
  std::size_t operator()(const Label& l) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto v : l.path()) {
      h ^= v + 0x9e3779b97f4a7c15ULL;
      h *= 0x100000001b3ULL;
    }
    h ^= l.generation();
    return static_cast<std::size_t>(h);
  }
};

} // namespace stopline
