#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace provenance {

// Identity of one reference image: (document, page, image). The canonical
// string `doc_id:page(4 digits, zero padded):image_id` sorts lexicographically
// in the same order as (doc_id, page_no, image_id) for ids without ':'.
struct CandidateLabel {
  std::string doc_id;
  int page_no = 0;
  std::string image_id;

  std::string str() const;
  static CandidateLabel parse(std::string_view canonical);

  bool operator==(const CandidateLabel& other) const = default;
  std::strong_ordering operator<=>(const CandidateLabel& other) const {
    return str() <=> other.str();
  }
};

// Ids used in labels, file names and URLs: [A-Za-z0-9._-]+.
bool is_valid_identifier(std::string_view id);

inline constexpr int kMaxPageNumber = 9999;

}  // namespace provenance
