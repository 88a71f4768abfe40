#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankedit/editor.hpp"

namespace rankedit {

inline constexpr std::size_t kPromptsPerPolarity = 5;
inline constexpr std::size_t kDefaultRoadLayer = 7;
inline constexpr std::size_t kDefaultTimeLayer = 9;

enum class DatasetFormat { kRoad, kTime };
enum class EntryKind { kRole, kAppearance };
enum class Split { kTest, kValidation };

// An evaluation prompt with its new-association and old-association
// descriptor variants.
struct PromptVariant {
  std::string prompt;
  std::string new_variant;
  std::string old_variant;
};

// One editing request together with its evaluation prompts. For TIME-format
// entries `target` holds the specified prompt and `source` the
// under-specified edit prompt; `kind` is unused.
struct DatasetEntry {
  std::string id;
  std::string edit_prompt;
  std::string subject;
  std::string source;
  std::string target;
  EntryKind kind = EntryKind::kRole;
  std::vector<PromptVariant> positives;
  std::vector<PromptVariant> negatives;
};

struct DatasetFile {
  DatasetFormat format = DatasetFormat::kRoad;
  int version = 1;
  Split split = Split::kTest;
  std::vector<DatasetEntry> entries;

  const DatasetEntry& find(const std::string& id) const;
};

inline constexpr int kDatasetVersion = 1;

DatasetFile parse_road(const nlohmann::json& doc, const std::string& origin);
DatasetFile parse_time(const nlohmann::json& doc, const std::string& origin);
DatasetFile load_road(const std::filesystem::path& path);
DatasetFile load_time(const std::filesystem::path& path);

nlohmann::ordered_json dataset_to_json(const DatasetFile& file);
std::string serialize_dataset(const DatasetFile& file);

// RoAD entries default to layer 7 and TIME entries to layer 9 when `layer`
// is empty.
EditRequest to_edit_request(const DatasetEntry& entry, DatasetFormat format,
                            std::optional<std::size_t> layer,
                            const std::vector<std::string>& templates);

const char* to_string(DatasetFormat format);
const char* to_string(EntryKind kind);
const char* to_string(Split split);

}  // namespace rankedit
