#include "provlm/corpus/sources.hpp"

#include <json.hpp>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"

namespace provlm::corpus {

std::string to_string(SourceFormat f) {
  switch (f) {
    case SourceFormat::text: return "text";
    case SourceFormat::jsonl: return "jsonl";
    case SourceFormat::binary: return "binary";
  }
  return "text";
}

SourceFormat parse_source_format(const std::string& s) {
  if (s == "text") return SourceFormat::text;
  if (s == "jsonl") return SourceFormat::jsonl;
  if (s == "binary") return SourceFormat::binary;
  throw CorpusError("unknown source format '" + s + "'");
}

SourceFormat infer_source_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl") return SourceFormat::jsonl;
  if (ext == ".bin" || ext == ".docs") return SourceFormat::binary;
  return SourceFormat::text;
}

std::vector<std::string> split_documents(const std::string& raw, SourceFormat format) {
  std::vector<std::string> docs;
  switch (format) {
    case SourceFormat::text: {
      std::size_t pos = 0;
      while (pos < raw.size()) {
        std::size_t end = raw.find("\n\n", pos);
        if (end == std::string::npos) end = raw.size();
        std::string doc = raw.substr(pos, end - pos);
        while (!doc.empty() && (doc.back() == '\n' || doc.back() == '\r')) doc.pop_back();
        if (!doc.empty()) docs.push_back(std::move(doc));
        pos = end;
        while (pos < raw.size() && raw[pos] == '\n') ++pos;
      }
      break;
    }
    case SourceFormat::jsonl: {
      std::size_t pos = 0;
      std::size_t line_no = 0;
      while (pos < raw.size()) {
        std::size_t end = raw.find('\n', pos);
        if (end == std::string::npos) end = raw.size();
        ++line_no;
        const std::string_view line(raw.data() + pos, end - pos);
        pos = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
          throw CorpusError("jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("text") || !j["text"].is_string())
          throw CorpusError("jsonl line " + std::to_string(line_no) + ": missing string field 'text'");
        docs.push_back(j["text"].get<std::string>());
      }
      break;
    }
    case SourceFormat::binary: {
      ByteReader r(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
      while (r.remaining() > 0) {
        const std::uint32_t n = r.u32();
        auto body = r.take(n);
        docs.emplace_back(body.begin(), body.end());
      }
      break;
    }
  }
  return docs;
}

SourceCursor::SourceCursor(SourceSpec spec, const std::filesystem::path& base_dir) : spec_(std::move(spec)) {
  const auto path = spec_.path.is_absolute() ? spec_.path : base_dir / spec_.path;
  if (!std::filesystem::exists(path))
    throw CorpusError("source '" + spec_.name + "': file not found: " + path.string());
  docs_ = split_documents(read_text_file(path), spec_.format);
  for (const auto& d : docs_) available_ += d.size();
}

std::vector<Document> SourceCursor::draw(std::uint64_t tokens) {
  if (consumed_ + tokens > available_)
    throw CorpusError("source '" + spec_.name + "' has " + std::to_string(available_ - consumed_) +
                      " tokens left but " + std::to_string(tokens) + " were requested");
  std::vector<Document> out;
  std::uint64_t left = tokens;
  while (left > 0) {
    const std::string& doc = docs_[doc_];
    const std::size_t take = static_cast<std::size_t>(std::min<std::uint64_t>(left, doc.size() - offset_));
    Document d;
    d.origin = DocumentRef{spec_.name, doc_};
    d.tokens = tokenize(std::string_view(doc).substr(offset_, take));
    out.push_back(std::move(d));
    left -= take;
    offset_ += take;
    if (offset_ == doc.size()) {
      ++doc_;
      offset_ = 0;
    }
  }
  consumed_ += tokens;
  return out;
}

void write_binary_documents(const std::filesystem::path& path, const std::vector<std::string>& docs) {
  ByteWriter w;
  for (const auto& d : docs) {
    w.u32(static_cast<std::uint32_t>(d.size()));
    w.str(d);
  }
  write_file_atomic(path, w.buffer());
}

}  // namespace provlm::corpus
