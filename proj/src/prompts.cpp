#include <set>

#include "provenance/hashing.hpp"
#include "provenance/inference.hpp"

namespace provenance {

PromptTemplate::PromptTemplate(std::string name, std::string text)
    : name_(std::move(name)), text_(std::move(text)), sha256_(sha256_hex(text_)) {}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::size_t pos = 0;
  while ((pos = text_.find("{{", pos)) != std::string::npos) {
    const auto end = text_.find("}}", pos + 2);
    if (end == std::string::npos) {
      break;
    }
    auto name = text_.substr(pos + 2, end - pos - 2);
    if (seen.insert(name).second) {
      out.push_back(std::move(name));
    }
    pos = end + 2;
  }
  return out;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  out.reserve(text_.size() * 2);
  std::size_t pos = 0;
  while (true) {
    const auto open = text_.find("{{", pos);
    if (open == std::string::npos) {
      out.append(text_, pos);
      break;
    }
    const auto close = text_.find("}}", open + 2);
    if (close == std::string::npos) {
      throw InvalidArgument("template " + name_ + " has an unterminated placeholder");
    }
    const auto key = text_.substr(open + 2, close - open - 2);
    const auto it = values.find(key);
    if (it == values.end()) {
      throw InvalidArgument("template " + name_ + " placeholder {{" + key + "}} has no value");
    }
    out.append(text_, pos, open - pos);
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

PromptSet PromptSet::from_directory(const std::filesystem::path& dir) {
  return PromptSet{
      PromptTemplate("interpret_candidate.v1", read_file_text((dir / "interpret_candidate.v1.txt").string())),
      PromptTemplate("synthesize_attribution.v1", read_file_text((dir / "synthesize_attribution.v1.txt").string())),
  };
}

}  // namespace provenance
