#include "rankedit/datasets.hpp"

#include <algorithm>
#include <set>

#include "rankedit/error.hpp"
#include "rankedit/io.hpp"

namespace rankedit {

namespace {

class EntryReader {
 public:
  EntryReader(const nlohmann::json& node, std::string path)
      : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail("", "expected an object");
  }

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw DataError(path_ + (field.empty() ? "" : "." + field) + ": " + what);
  }

  std::string text(const std::string& field) const {
    if (!node_.contains(field)) fail(field, "missing field");
    const auto& v = node_.at(field);
    if (!v.is_string()) fail(field, "expected a string");
    auto s = v.get<std::string>();
    if (split_words(s).empty()) fail(field, "must not be empty");
    return s;
  }

  std::vector<PromptVariant> variants(const std::string& field, const char* new_key,
                                      const char* old_key) const {
    if (!node_.contains(field)) fail(field, "missing field");
    const auto& arr = node_.at(field);
    if (!arr.is_array()) fail(field, "expected an array");
    if (arr.size() != kPromptsPerPolarity) {
      fail(field, "expected exactly " + std::to_string(kPromptsPerPolarity) +
                      " records, found " + std::to_string(arr.size()));
    }
    std::vector<PromptVariant> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      EntryReader rec(arr[i], path_ + "." + field + "[" + std::to_string(i) + "]");
      out.push_back({rec.text("prompt"), rec.text(new_key), rec.text(old_key)});
    }
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  const nlohmann::json& node_;
  std::string path_;
};

bool contains_words(const std::string& haystack, const std::string& needle) {
  const auto h = split_words(haystack);
  const auto n = split_words(needle);
  return !n.empty() && std::search(h.begin(), h.end(), n.begin(), n.end()) != h.end();
}

DatasetFile parse_common(const nlohmann::json& doc, const std::string& origin,
                         DatasetFormat format) {
  if (!doc.is_object()) throw DataError(origin + ": top level must be an object");
  DatasetFile file;
  file.format = format;
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw DataError(origin + ": version: missing or not an integer");
  }
  file.version = doc["version"].get<int>();
  if (file.version != kDatasetVersion) {
    throw DataError(origin + ": version: unsupported value " + std::to_string(file.version));
  }
  const auto split = doc.value("split", std::string{});
  if (split == "test") {
    file.split = Split::kTest;
  } else if (split == "validation") {
    file.split = Split::kValidation;
  } else {
    throw DataError(origin + ": split: expected 'test' or 'validation'");
  }
  if (!doc.contains("entries") || !doc["entries"].is_array()) {
    throw DataError(origin + ": entries: missing or not an array");
  }
  if (doc["entries"].empty()) throw DataError(origin + ": entries: dataset is empty");

  std::set<std::string> seen;
  const auto& entries = doc["entries"];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::string path = origin + ": entries[" + std::to_string(i) + "]";
    if (entries[i].is_object() && entries[i].contains("id") && entries[i]["id"].is_string()) {
      path += " (id '" + entries[i]["id"].get<std::string>() + "')";
    }
    EntryReader r(entries[i], path);
    DatasetEntry e;
    e.id = r.text("id");
    e.edit_prompt = r.text("edit_prompt");
    e.subject = r.text("subject");
    if (format == DatasetFormat::kRoad) {
      e.source = r.text("source");
      e.target = r.text("target");
      const auto kind = r.text("kind");
      if (kind == "role") {
        e.kind = EntryKind::kRole;
      } else if (kind == "appearance") {
        e.kind = EntryKind::kAppearance;
      } else {
        r.fail("kind", "expected 'role' or 'appearance'");
      }
      if (e.kind == EntryKind::kAppearance && e.source != e.edit_prompt) {
        r.fail("source", "appearance entries must use the edit prompt as the source");
      }
    } else {
      e.target = r.text("target_prompt");
      e.source = e.edit_prompt;
      if (!contains_words(e.target, e.subject)) {
        r.fail("target_prompt", "must contain the subject '" + e.subject + "'");
      }
    }
    if (!contains_words(e.edit_prompt, e.subject)) {
      r.fail("subject", "'" + e.subject + "' does not occur in edit_prompt");
    }
    e.positives = r.variants("positives", "positive_new", "positive_old");
    e.negatives = r.variants("negatives", "negative_new", "negative_old");
    if (!seen.insert(e.id).second) r.fail("id", "duplicate entry id");
    file.entries.push_back(std::move(e));
  }
  return file;
}

nlohmann::ordered_json variants_json(const std::vector<PromptVariant>& vs, const char* new_key,
                                     const char* old_key) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& v : vs) {
    arr.push_back({{"prompt", v.prompt}, {new_key, v.new_variant}, {old_key, v.old_variant}});
  }
  return arr;
}

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

const DatasetEntry& DatasetFile::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw DataError("dataset has no entry with id '" + id + "'");
}

DatasetFile parse_road(const nlohmann::json& doc, const std::string& origin) {
  return parse_common(doc, origin, DatasetFormat::kRoad);
}

DatasetFile parse_time(const nlohmann::json& doc, const std::string& origin) {
  return parse_common(doc, origin, DatasetFormat::kTime);
}

DatasetFile load_road(const std::filesystem::path& path) {
  return parse_road(parse_json_file(path), path.string());
}

DatasetFile load_time(const std::filesystem::path& path) {
  return parse_time(parse_json_file(path), path.string());
}

nlohmann::ordered_json dataset_to_json(const DatasetFile& file) {
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : file.entries) {
    nlohmann::ordered_json j = {{"id", e.id}, {"edit_prompt", e.edit_prompt}, {"subject", e.subject}};
    if (file.format == DatasetFormat::kRoad) {
      j["source"] = e.source;
      j["target"] = e.target;
      j["kind"] = to_string(e.kind);
    } else {
      j["target_prompt"] = e.target;
    }
    j["positives"] = variants_json(e.positives, "positive_new", "positive_old");
    j["negatives"] = variants_json(e.negatives, "negative_new", "negative_old");
    entries.push_back(std::move(j));
  }
  return {{"version", file.version}, {"split", to_string(file.split)}, {"entries", entries}};
}

std::string serialize_dataset(const DatasetFile& file) {
  return dataset_to_json(file).dump(2) + "\n";
}

EditRequest to_edit_request(const DatasetEntry& entry, DatasetFormat format,
                            std::optional<std::size_t> layer,
                            const std::vector<std::string>& templates) {
  EditRequest req;
  req.id = entry.id;
  req.edit_prompt = entry.edit_prompt;
  req.subject = entry.subject;
  req.source_text = entry.source;
  req.target = entry.target;
  req.layer = layer.value_or(format == DatasetFormat::kRoad ? kDefaultRoadLayer
                                                            : kDefaultTimeLayer);
  req.key_templates = templates.empty() ? default_key_templates() : templates;
  return req;
}

const char* to_string(DatasetFormat format) {
  return format == DatasetFormat::kRoad ? "road" : "time";
}

const char* to_string(EntryKind kind) {
  return kind == EntryKind::kRole ? "role" : "appearance";
}

const char* to_string(Split split) {
  return split == Split::kTest ? "test" : "validation";
}

}  // namespace rankedit
