#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmreg/deform_params.hpp"
#include "mmreg/field.hpp"
#include "mmreg/image.hpp"

namespace mmreg {

/// One dataset entry: fixed F, moving M, optional label and generating field.
struct PairRecord {
    std::string id;
    std::string source_id;  ///< Original slice the record derives from; grouping key for splits.
    GrayImage fixed;
    GrayImage moving;
    std::optional<GrayImage> label;
    std::optional<DisplacementField> truth_field;
    std::optional<DeformParams> deform;
    std::optional<Level> level;

    /// Throws DataError if present images disagree in shape.
    void validate() const;
};

/// Writes `pairs/<id>_{fixed,moving,label}.pgm`, `pairs/<id>_truth.ddf` and
/// `manifest.jsonl` under `dir`.
void write_dataset(const std::vector<PairRecord>& records, const std::filesystem::path& dir);

/// Reads a directory produced by write_dataset.
std::vector<PairRecord> read_dataset(const std::filesystem::path& dir);

} // namespace mmreg
