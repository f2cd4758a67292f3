#pragma once

#include <string>

#include "provenance/errors.hpp"

namespace provenance::http {

// "https://host:8443/v1" -> {"https://host:8443", "/v1"}
struct UrlParts {
  std::string origin;
  std::string path_prefix;
};

inline UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw InvalidArgument("URL lacks a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, ""};
  }
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') {
    prefix.pop_back();
  }
  return {url.substr(0, path_start), prefix};
}

}  // namespace provenance::http
