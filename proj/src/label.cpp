#include "provenance/label.hpp"

#include <charconv>
#include <cstdio>

#include "provenance/errors.hpp"

namespace provenance {

std::string CandidateLabel::str() const {
  char page[16];
  std::snprintf(page, sizeof(page), "%04d", page_no);
  std::string out;
  out.reserve(doc_id.size() + image_id.size() + 6);
  out += doc_id;
  out += ':';
  out += page;
  out += ':';
  out += image_id;
  return out;
}

CandidateLabel CandidateLabel::parse(std::string_view canonical) {
  const auto first = canonical.find(':');
  const auto last = canonical.rfind(':');
  if (first == std::string_view::npos || first == last) {
    throw InvalidArgument("malformed label: " + std::string(canonical));
  }
  CandidateLabel label;
  label.doc_id = std::string(canonical.substr(0, first));
  label.image_id = std::string(canonical.substr(last + 1));
  const auto page = canonical.substr(first + 1, last - first - 1);
  const auto [ptr, ec] = std::from_chars(page.data(), page.data() + page.size(), label.page_no);
  if (ec != std::errc() || ptr != page.data() + page.size() || page.size() < 4 ||
      !is_valid_identifier(label.doc_id) || !is_valid_identifier(label.image_id) ||
      label.page_no < 1) {
    throw InvalidArgument("malformed label: " + std::string(canonical));
  }
  return label;
}

bool is_valid_identifier(std::string_view id) {
  if (id.empty()) {
    return false;
  }
  for (const char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '-';
    if (!ok) {
      return false;
    }
  }
  return true;
}

}  // namespace provenance
