#include "stepmig/schema.hpp"

#include <algorithm>
#include <cctype>
#include <nlohmann/json.hpp>

namespace mig {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";
constexpr std::string_view kStepPrefix = "### Step";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<size_t> find_all(std::string_view text, std::string_view needle) {
  std::vector<size_t> out;
  size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string_view::npos) {
    out.push_back(pos);
    pos += needle.size();
  }
  return out;
}

bool all_space(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_space);
}

struct Header {
  size_t pos;            // char offset of "###"
  size_t content_begin;  // char offset just after the digits
  int number;
  bool at_line_start;
};

// Headers are recognized anywhere (best-effort segmentation); validity
// additionally requires line-start placement and consecutive numbering.
std::vector<Header> scan_headers(std::string_view text, size_t lo, size_t hi) {
  std::vector<Header> headers;
  size_t pos = lo;
  while (pos < hi) {
    size_t p = text.find(kStepPrefix, pos);
    if (p == std::string_view::npos || p >= hi) break;
    size_t q = p + kStepPrefix.size();
    size_t digits = q;
    while (digits < hi && (text[digits] == ' ' || text[digits] == '\t')) ++digits;
    size_t dend = digits;
    while (dend < hi && std::isdigit(static_cast<unsigned char>(text[dend]))) ++dend;
    if (digits == q || dend == digits) {  // no separator or no digits: not a header
      pos = q;
      continue;
    }
    int number = 0;
    for (size_t i = digits; i < dend; ++i) number = number * 10 + (text[i] - '0');
    size_t line_begin = text.rfind('\n', p == 0 ? 0 : p - 1);
    line_begin = (line_begin == std::string_view::npos) ? 0 : line_begin + 1;
    bool at_start = all_space(text.substr(line_begin, p - line_begin));
    headers.push_back({p, dend, number, at_start});
    pos = dend;
  }
  return headers;
}

// Maps char offsets to whitespace-token indices.
struct WordIndex {
  std::vector<size_t> starts;
  std::vector<size_t> ends;

  explicit WordIndex(std::string_view text) {
    size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      if (i >= text.size()) break;
      size_t b = i;
      while (i < text.size() && !is_space(text[i])) ++i;
      starts.push_back(b);
      ends.push_back(i);
    }
  }

  int count() const { return static_cast<int>(starts.size()); }

  // First token overlapping or after the char position.
  int token_at_or_after(size_t pos) const {
    int lo = 0, hi = count();
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (ends[mid] > pos) hi = mid;
      else lo = mid + 1;
    }
    return lo;
  }

  // One past the last token starting before the char position.
  int token_end_before(size_t pos) const {
    int lo = 0, hi = count();
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (starts[mid] < pos) lo = mid + 1;
      else hi = mid;
    }
    return lo;
  }
};

}  // namespace

ParsedTrajectory parse_completion(const RawCompletion& raw) {
  const std::string& text = raw.text;
  ParsedTrajectory out;
  WordIndex words(text);
  out.token_count = words.count();
  out.full_span = {0, out.token_count};

  auto think_opens = find_all(text, kThinkOpen);
  auto think_closes = find_all(text, kThinkClose);
  auto ans_opens = find_all(text, kAnswerOpen);
  auto ans_closes = find_all(text, kAnswerClose);

  // <think> matches "</think>" too if we searched naively; find_all on
  // "<think>" does not overlap "</think>" because of the leading '<'.
  // But "<answer>" occurrences inside "</answer>" cannot happen either.

  bool regions_ok = think_opens.size() == 1 && think_closes.size() == 1 &&
                    ans_opens.size() == 1 && ans_closes.size() == 1 &&
                    think_opens[0] < think_closes[0] &&
                    think_closes[0] < ans_opens[0] && ans_opens[0] < ans_closes[0];

  // Best-effort think region for step scanning.
  size_t scan_lo = 0, scan_hi = text.size();
  bool have_think = false;
  if (!think_opens.empty()) {
    scan_lo = think_opens[0] + kThinkOpen.size();
    have_think = true;
    auto close_after = std::find_if(think_closes.begin(), think_closes.end(),
                                    [&](size_t p) { return p >= scan_lo; });
    scan_hi = close_after != think_closes.end() ? *close_after : text.size();
  }

  auto headers = scan_headers(text, scan_lo, scan_hi);
  bool headers_at_line_start = true;
  bool numbering_ok = true;
  for (size_t i = 0; i < headers.size(); ++i) {
    headers_at_line_start = headers_at_line_start && headers[i].at_line_start;
    numbering_ok = numbering_ok && headers[i].number == static_cast<int>(i) + 1;
  }

  for (size_t i = 0; i < headers.size(); ++i) {
    size_t tend = (i + 1 < headers.size()) ? headers[i + 1].pos : scan_hi;
    ParsedStep step;
    step.number = headers[i].number;
    step.text = trim(std::string_view(text).substr(headers[i].content_begin,
                                                   tend - headers[i].content_begin));
    step.span = {words.token_at_or_after(headers[i].pos), words.token_end_before(tend)};
    out.steps.push_back(std::move(step));
  }

  // Best-effort answer: first well-formed pair, wherever it sits.
  if (!ans_opens.empty()) {
    size_t content = ans_opens[0] + kAnswerOpen.size();
    auto close_after = std::find_if(ans_closes.begin(), ans_closes.end(),
                                    [&](size_t p) { return p >= content; });
    if (close_after != ans_closes.end())
      out.answer = trim(std::string_view(text).substr(content, *close_after - content));
  }

  bool outside_ok = false;
  if (regions_ok) {
    std::string_view t(text);
    outside_ok = all_space(t.substr(0, think_opens[0])) &&
                 all_space(t.substr(think_closes[0] + kThinkClose.size(),
                                    ans_opens[0] - think_closes[0] - kThinkClose.size())) &&
                 all_space(t.substr(ans_closes[0] + kAnswerClose.size()));
  }

  out.format_valid =
      regions_ok && outside_ok && have_think && headers_at_line_start && numbering_ok;

  if (have_think) {
    out.cot_span = {words.token_at_or_after(scan_lo), words.token_end_before(scan_hi)};
    if (out.cot_span.end < out.cot_span.begin) out.cot_span.end = out.cot_span.begin;
  }
  if (regions_ok) {
    out.full_span = {words.token_at_or_after(think_opens[0]),
                     words.token_end_before(ans_closes[0] + kAnswerClose.size())};
  }
  return out;
}

double format_reward(const ParsedTrajectory& traj) {
  return traj.format_valid ? 1.0 : 0.0;
}

std::string canonical_render(const ParsedTrajectory& traj) {
  std::string s = "<think>\n";
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    s += "### Step " + std::to_string(i + 1) + "\n";
    s += traj.steps[i].text;
    s += "\n";
  }
  s += "</think>\n<answer>";
  if (traj.answer) s += *traj.answer;
  s += "</answer>";
  return s;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    size_t b = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    out.push_back(text.substr(b, i - b));
  }
  return out;
}

std::string fixture_record_json(const ParsedTrajectory& traj) {
  nlohmann::json j;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : traj.steps) j["steps"].push_back(s.text);
  if (traj.answer) j["answer"] = *traj.answer;
  else j["answer"] = nullptr;
  j["format_valid"] = traj.format_valid;
  return j.dump();
}

bool fixture_record_matches(const ParsedTrajectory& traj, const std::string& record_json,
                            std::string* why) {
  nlohmann::json want = nlohmann::json::parse(record_json);
  nlohmann::json got = nlohmann::json::parse(fixture_record_json(traj));
  for (const char* key : {"steps", "answer", "format_valid"}) {
    if (want.contains(key) && want[key] != got[key]) {
      if (why) *why = std::string(key) + ": expected " + want[key].dump() + ", got " + got[key].dump();
      return false;
    }
  }
  return true;
}

}  // namespace mig
