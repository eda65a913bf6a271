#include "mmreg/record.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "mmreg/error.hpp"

namespace mmreg {

using nlohmann::json;

void PairRecord::validate() const {
    if (fixed.empty() || !fixed.same_shape(moving)) {
        throw DataError("record " + id + ": fixed and moving images must be nonempty and share dimensions");
    }
    if (label && !label->same_shape(fixed)) {
        throw DataError("record " + id + ": label dimensions differ from fixed");
    }
    if (truth_field && !truth_field->same_shape(fixed)) {
        throw DataError("record " + id + ": truth field dimensions differ from fixed");
    }
}

void write_dataset(const std::vector<PairRecord>& records, const std::filesystem::path& dir) {
    const auto pairs_dir = dir / "pairs";
    std::error_code ec;
    std::filesystem::create_directories(pairs_dir, ec);
    if (ec) {
        throw IoError("write_dataset: cannot create " + pairs_dir.string() + ": " + ec.message());
    }
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
    if (!manifest) {
        throw IoError("write_dataset: cannot write manifest in " + dir.string());
    }
    for (const auto& rec : records) {
        rec.validate();
        json files;
        const std::string stem = "pairs/" + rec.id;
        save_pgm(rec.fixed, dir / (stem + "_fixed.pgm"));
        files["fixed"] = stem + "_fixed.pgm";
        save_pgm(rec.moving, dir / (stem + "_moving.pgm"));
        files["moving"] = stem + "_moving.pgm";
        if (rec.label) {
            save_pgm(*rec.label, dir / (stem + "_label.pgm"));
            files["label"] = stem + "_label.pgm";
        }
        if (rec.truth_field) {
            save_ddf(*rec.truth_field, dir / (stem + "_truth.ddf"));
            files["truth"] = stem + "_truth.ddf";
        }
        json line{{"id", rec.id}, {"source_id", rec.source_id.empty() ? rec.id : rec.source_id}, {"files", files}};
        if (rec.deform) {
            line["params"] = {{"sigma", rec.deform->sigma},
                              {"alpha", rec.deform->alpha},
                              {"filter_size", rec.deform->filter_size},
                              {"seed", rec.deform->seed}};
        }
        if (rec.level) {
            line["level"] = std::string(to_string(*rec.level));
        }
        manifest << line.dump() << '\n';
    }
    if (!manifest) {
        throw IoError("write_dataset: manifest write failed in " + dir.string());
    }
}

std::vector<PairRecord> read_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.jsonl");
    if (!manifest) {
        throw IoError("read_dataset: no manifest.jsonl in " + dir.string());
    }
    std::vector<PairRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const json j = json::parse(line);
            PairRecord rec;
            rec.id = j.at("id").get<std::string>();
            rec.source_id = j.value("source_id", rec.id);
            const json& files = j.at("files");
            rec.fixed = load_pgm(dir / files.at("fixed").get<std::string>());
            rec.moving = load_pgm(dir / files.at("moving").get<std::string>());
            if (files.contains("label")) {
                rec.label = load_pgm(dir / files.at("label").get<std::string>());
            }
            if (files.contains("truth")) {
                rec.truth_field = load_ddf(dir / files.at("truth").get<std::string>());
            }
            if (j.contains("params")) {
                const json& p = j.at("params");
                rec.deform = DeformParams{p.at("sigma").get<double>(), p.at("alpha").get<double>(),
                                          p.at("filter_size").get<int>(), p.at("seed").get<std::uint64_t>()};
            }
            if (j.contains("level")) {
                rec.level = level_from_string(j.at("level").get<std::string>());
            }
            rec.validate();
            records.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw DataError("read_dataset: manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

} // namespace mmreg
