#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "dflow/dataset.hpp"
#include "dflow/metrics.hpp"

/// One crystal per line:
/// {"lattice":{...},"sites":[{"s":[{"z":..,"p":..}],"positions":[[..]],"pos_weights":[..]}],"meta":{..}}
namespace dflow::data {

nlohmann::json crystal_to_json(const DisorderedCrystal& crystal);

/// Throws DataError describing the first schema violation. The result is padded
/// to `min_order` when that exceeds the stored order.
DisorderedCrystal crystal_from_json(const nlohmann::json& j, int min_order = 0,
                                    int vocab_size = kDefaultVocabSize);

/// The split label, if any, is stored as meta["split"].
nlohmann::json entry_to_json(const Entry& entry);
Entry entry_from_json(const nlohmann::json& j, int min_order = 0);

void write_jsonl(const Dataset& dataset, std::ostream& out);
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);

/// Every crystal is padded to the largest order in the file (or `min_order`).
/// Errors name the offending line.
Dataset read_jsonl(std::istream& in, int min_order = 0);
Dataset read_jsonl(const std::filesystem::path& path, int min_order = 0);

/// Flat object; absent quantities are written as null.
nlohmann::json report_to_json(const metrics::EvalReport& report);

}  // namespace dflow::data
