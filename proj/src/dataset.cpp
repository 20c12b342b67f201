#include "m4/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace m4 {

using nlohmann::json;

const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::Path3Alignment: return "path3-alignment";
        case DatasetKind::Path2Lm: return "path2-lm";
        case DatasetKind::Path1Caption: return "path1-caption";
    }
    return "?";
}

DatasetKind dataset_kind_from_name(const std::string& s) {
    if (s == "path3-alignment") return DatasetKind::Path3Alignment;
    if (s == "path2-lm") return DatasetKind::Path2Lm;
    if (s == "path1-caption") return DatasetKind::Path1Caption;
    fail(errc::parse, "unknown dataset kind: " + s);
}

namespace {

const std::vector<std::string> kActivityLabels = {"walking", "sitting",  "standing", "running",
                                                  "cycling", "climbing", "driving",  "sleeping",
                                                  "eating",  "typing"};
const std::vector<std::string> kCaptionWords = {"car", "tree", "dog", "boat"};

Payload class_payload(Modality modality, const Matrix& proto, rng& gen, double noise) {
    switch (modality) {
        case Modality::Imu: {
            Matrix w = proto;
            for (auto& v : w.data) v += noise * gen.normal();
            return imu_payload(w);
        }
        case Modality::Image: {
            std::vector<double> chw(proto.data);
            for (auto& v : chw) v = std::clamp(v + noise * gen.normal(), 0.0, 1.0);
            return image_payload(chw);
        }
        case Modality::AudioBackground:
        case Modality::AudioIntent: {
            std::vector<double> s(proto.data);
            for (auto& v : s) v += noise * gen.normal();
            return audio_payload(s, modality == Modality::AudioIntent);
        }
        default:
            fail(errc::invalid_argument, "unsupported payload modality for synthetic data");
    }
}

Matrix class_prototype(Modality modality, rng& gen) {
    switch (modality) {
        case Modality::Imu: {
            Matrix m(8, 6);
            for (auto& v : m.data) v = gen.uniform(-1.5, 1.5);
            return m;
        }
        case Modality::Image: {
            // high-contrast binary patterns keep pooled embeddings apart
            Matrix m(1, 3 * 16 * 16);
            for (auto& v : m.data) v = gen.below(2) ? 0.9 : 0.1;
            return m;
        }
        case Modality::AudioBackground:
        case Modality::AudioIntent: {
            Matrix m(1, 128);
            for (auto& v : m.data) v = gen.uniform(-1.0, 1.0);
            return m;
        }
        default:
            fail(errc::invalid_argument, "unsupported payload modality for synthetic data");
    }
}

std::size_t zipf_class(rng& gen, std::size_t k, double s) {
    std::vector<double> weights(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        weights[i] = 1.0 / std::pow(static_cast<double>(i + 1), s);
        total += weights[i];
    }
    double u = gen.uniform(0.0, total);
    for (std::size_t i = 0; i < k; ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    return k - 1;
}

}  // namespace

SyntheticDataset SyntheticDataset::generate(DatasetKind kind, std::uint64_t seed, std::size_t size,
                                            Modality payload_modality, double zipf_exponent) {
    if (size < 5) fail(errc::invalid_argument, "synthetic dataset needs at least 5 samples");
    SyntheticDataset d;
    d.kind = kind;
    d.seed = seed;
    d.size = size;
    d.zipf_exponent = zipf_exponent;
    d.payload_modality = payload_modality;
    rng root(seed);

    std::vector<SyntheticSample> all;
    switch (kind) {
        case DatasetKind::Path3Alignment: {
            d.labels = kActivityLabels;
            const std::size_t k = d.labels.size();
            std::vector<Matrix> protos;
            rng pgen = root.fork("prototypes");
            for (std::size_t i = 0; i < k; ++i) protos.push_back(class_prototype(payload_modality, pgen));
            // pixel payloads live in [0,1]; keep their noise below the class contrast
            const double noise = payload_modality == Modality::Image ? 0.08 : 0.35;
            rng sgen = root.fork("samples");
            for (std::size_t i = 0; i < size; ++i) {
                SyntheticSample s;
                s.label = zipf_exponent > 0.0 ? zipf_class(sgen, k, zipf_exponent) : i % k;
                s.payload = class_payload(payload_modality, protos[s.label], sgen, noise);
                s.text = d.labels[s.label];
                all.push_back(std::move(s));
            }
            break;
        }
        case DatasetKind::Path2Lm: {
            // key=value grammar with a per-seed letter cipher
            rng cgen = root.fork("cipher");
            std::string alphabet = "abcdefgh";
            std::string mapped = alphabet;
            for (std::size_t i = mapped.size(); i > 1; --i)
                std::swap(mapped[i - 1], mapped[cgen.below(i)]);
            rng sgen = root.fork("samples");
            for (std::size_t i = 0; i < size; ++i) {
                SyntheticSample s;
                std::string key;
                for (int j = 0; j < 3; ++j) key.push_back(alphabet[sgen.below(alphabet.size())]);
                std::string value;
                for (char c : key) value.push_back(mapped[alphabet.find(c)]);
                s.text = key + "=" + value + ".";
                s.payload = text_payload(s.text);
                all.push_back(std::move(s));
            }
            break;
        }
        case DatasetKind::Path1Caption: {
            d.labels = kCaptionWords;
            const std::size_t k = d.labels.size();
            std::vector<Matrix> protos;
            rng pgen = root.fork("prototypes");
            const Modality m = payload_modality == Modality::Imu ? Modality::Image : payload_modality;
            d.payload_modality = m;
            for (std::size_t i = 0; i < k; ++i) protos.push_back(class_prototype(m, pgen));
            rng sgen = root.fork("samples");
            for (std::size_t i = 0; i < size; ++i) {
                SyntheticSample s;
                s.label = i % k;
                s.payload = class_payload(m, protos[s.label], sgen, 0.2);
                s.text = "a photo of " + d.labels[s.label];
                all.push_back(std::move(s));
            }
            break;
        }
    }

    const std::size_t eval_count = std::max<std::size_t>(1, size / 5);
    const std::size_t train_count = size - eval_count;
    d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(train_count));
    d.eval.assign(all.begin() + static_cast<std::ptrdiff_t>(train_count), all.end());
    return d;
}

std::string SyntheticDataset::manifest_json() const {
    json j;
    j["kind"] = dataset_kind_name(kind);
    j["seed"] = seed;
    j["size"] = size;
    j["modality"] = modality_name(payload_modality);
    j["zipf"] = zipf_exponent;
    return j.dump(1);
}

SyntheticDataset SyntheticDataset::from_manifest_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(errc::parse, std::string("dataset manifest: ") + e.what());
    }
    return generate(dataset_kind_from_name(j.at("kind").get<std::string>()), j.at("seed").get<std::uint64_t>(),
                    j.at("size").get<std::size_t>(),
                    modality_from_name(j.value("modality", std::string("imu"))), j.value("zipf", 0.0));
}

}  // namespace m4
