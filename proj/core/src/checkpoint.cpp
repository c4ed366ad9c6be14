#include "xbe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("xbe::checkpoint: " + msg); }

constexpr char kMagic[4] = {'X', 'B', 'E', '1'};
constexpr std::uint8_t kVersion = 1;

struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

void write_u16(std::ostream& os, std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }
void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail("truncated file");
    return v;
}

void write_entries(const std::string& path, const std::map<std::string, Entry>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    write_u32(os, static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, e] : entries) {
        write_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(e.shape.size()));
        for (int d : e.shape) write_u32(os, static_cast<std::uint32_t>(d));
        write_u64(os, offset);
        offset += e.data.size() * sizeof(double);
    }
    for (const auto& [name, e] : entries)
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    if (!os) fail("write failed for " + path);
}

std::map<std::string, Entry> read_entries(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) fail(path + " is not an XBE1 checkpoint");
    const auto version = read_pod<std::uint8_t>(is);
    if (version != kVersion) fail("unsupported checkpoint version " + std::to_string(version));
    const auto count = read_pod<std::uint32_t>(is);

    struct RawEntry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
        std::uint64_t count;
    };
    std::vector<RawEntry> raw;
    raw.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = read_pod<std::uint8_t>(is);
        Shape shape;
        std::uint64_t numel = 1;
        for (int r = 0; r < rank; ++r) {
            const auto d = read_pod<std::uint32_t>(is);
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        const auto offset = read_pod<std::uint64_t>(is);
        raw.push_back({std::move(name), std::move(shape), offset, numel});
    }
    const std::streampos payload_start = is.tellg();
    std::map<std::string, Entry> out;
    for (const RawEntry& r : raw) {
        Entry e;
        e.name = r.name;
        e.shape = r.shape;
        e.data.resize(r.count);
        is.seekg(payload_start + static_cast<std::streamoff>(r.offset));
        is.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(r.count * sizeof(double)));
        if (!is) fail("truncated payload for tensor " + r.name);
        out.emplace(r.name, std::move(e));
    }
    return out;
}

void put_scalar(std::map<std::string, Entry>& m, const std::string& name, double v) {
    m.emplace(name, Entry{name, {1}, {v}});
}

double get_scalar(const std::map<std::string, Entry>& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) fail("missing metadata entry " + name);
    return it->second.data.at(0);
}

int get_int(const std::map<std::string, Entry>& m, const std::string& name) {
    return static_cast<int>(get_scalar(m, name));
}

void put_encoder(std::map<std::string, Entry>& m, const std::string& p, const EncoderConfig& c) {
    put_scalar(m, p + ".depth", c.depth);
    put_scalar(m, p + ".width", c.width);
    put_scalar(m, p + ".heads", c.heads);
    put_scalar(m, p + ".ffn_mult", c.ffn_mult);
    put_scalar(m, p + ".max_len", c.max_len);
    put_scalar(m, p + ".vocab_size", c.vocab_size);
}

EncoderConfig get_encoder(const std::map<std::string, Entry>& m, const std::string& p) {
    EncoderConfig c;
    c.depth = get_int(m, p + ".depth");
    c.width = get_int(m, p + ".width");
    c.heads = get_int(m, p + ".heads");
    c.ffn_mult = get_int(m, p + ".ffn_mult");
    c.max_len = get_int(m, p + ".max_len");
    c.vocab_size = get_int(m, p + ".vocab_size");
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const XbeModel& model) {
    std::map<std::string, Entry> entries;
    for (const auto& [name, t] : model.named_params()) {
        Entry e;
        e.name = name;
        e.shape = t.shape();
        e.data.assign(t.data().begin(), t.data().end());
        entries.emplace(name, std::move(e));
    }

    const XbeConfig& c = model.config();
    put_encoder(entries, "meta.text", c.text);
    put_encoder(entries, "meta.kg", c.kg);
    std::uint64_t stitch_mask = 0;
    for (int site : c.stitch_layers) stitch_mask |= (1ull << site);
    put_scalar(entries, "meta.stitch_mask", static_cast<double>(stitch_mask));
    put_scalar(entries, "meta.stitch_hidden", c.stitch_hidden);
    put_scalar(entries, "meta.lambda_t", c.lambda_t);
    put_scalar(entries, "meta.lambda_s", c.lambda_s);
    put_scalar(entries, "meta.gate_mode", c.gate_mode == GateMode::fixed ? 1.0 : 0.0);
    put_scalar(entries, "meta.fixed_gate", c.fixed_gate);
    put_scalar(entries, "meta.loss_weight", c.loss_weight);
    put_scalar(entries, "meta.n_target_relations", c.n_target_relations);
    put_scalar(entries, "meta.transe_dim", c.transe_dim);
    const AblationSwitches& a = c.ablate;
    const int ablate_mask = (a.no_xstitch ? 1 : 0) | (a.no_kg_encoder ? 2 : 0) |
                            (a.no_text_encoder ? 4 : 0) | (a.no_rht ? 8 : 0) |
                            (a.freeze_kg ? 16 : 0) | (a.random_init_kg ? 32 : 0);
    put_scalar(entries, "meta.ablate_mask", ablate_mask);
    put_scalar(entries, "meta.kg_vocab.n_relations", model.kg_vocab().n_relations);
    put_scalar(entries, "meta.kg_vocab.n_entities", model.kg_vocab().n_entities);

    const TransETable& te = model.transe();
    put_scalar(entries, "meta.transe.present", te.n_entities() > 0 ? 1.0 : 0.0);
    if (te.n_entities() > 0) {
        put_scalar(entries, "meta.transe.n_entities", te.n_entities());
        put_scalar(entries, "meta.transe.n_relations", te.n_relations());
        put_scalar(entries, "meta.transe.trained", te.trained() ? 1.0 : 0.0);
        entries.emplace("transe.entities",
                        Entry{"transe.entities", {te.n_entities(), te.dim()}, te.entity_storage()});
        entries.emplace("transe.relations",
                        Entry{"transe.relations", {te.n_relations(), te.dim()}, te.relation_storage()});
    }
    write_entries(path, entries);
}

XbeModel load_checkpoint(const std::string& path) {
    auto entries = read_entries(path);

    XbeConfig c;
    c.text = get_encoder(entries, "meta.text");
    c.kg = get_encoder(entries, "meta.kg");
    const auto stitch_mask = static_cast<std::uint64_t>(get_scalar(entries, "meta.stitch_mask"));
    c.stitch_layers.clear();
    for (int site = 0; site < 64; ++site)
        if (stitch_mask & (1ull << site)) c.stitch_layers.push_back(site);
    c.stitch_hidden = get_int(entries, "meta.stitch_hidden");
    c.lambda_t = get_scalar(entries, "meta.lambda_t");
    c.lambda_s = get_scalar(entries, "meta.lambda_s");
    c.gate_mode = get_scalar(entries, "meta.gate_mode") > 0.5 ? GateMode::fixed : GateMode::dynamic;
    c.fixed_gate = get_scalar(entries, "meta.fixed_gate");
    c.loss_weight = get_scalar(entries, "meta.loss_weight");
    c.n_target_relations = get_int(entries, "meta.n_target_relations");
    c.transe_dim = get_int(entries, "meta.transe_dim");
    const int ablate_mask = get_int(entries, "meta.ablate_mask");
    c.ablate.no_xstitch = ablate_mask & 1;
    c.ablate.no_kg_encoder = ablate_mask & 2;
    c.ablate.no_text_encoder = ablate_mask & 4;
    c.ablate.no_rht = ablate_mask & 8;
    c.ablate.freeze_kg = ablate_mask & 16;
    c.ablate.random_init_kg = ablate_mask & 32;

    KgVocabLayout layout;
    layout.n_relations = get_int(entries, "meta.kg_vocab.n_relations");
    layout.n_entities = get_int(entries, "meta.kg_vocab.n_entities");

    XbeModel model(c, layout, 0);
    for (auto& [name, t] : model.named_params()) {
        auto it = entries.find(name);
        if (it == entries.end()) fail("checkpoint is missing parameter " + name);
        if (it->second.shape != t.shape())
            fail("shape mismatch for " + name + ": file " + shape_str(it->second.shape) +
                 " vs model " + shape_str(t.shape()));
        auto dst = t.mutable_data();
        std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
    }

    if (get_scalar(entries, "meta.transe.present") > 0.5) {
        const int ne = get_int(entries, "meta.transe.n_entities");
        const int nr = get_int(entries, "meta.transe.n_relations");
        Rng scratch(0);
        TransETable table(ne, nr, c.transe_dim, scratch);
        table.entity_storage() = entries.at("transe.entities").data;
        table.relation_storage() = entries.at("transe.relations").data;
        if (get_scalar(entries, "meta.transe.trained") > 0.5) table.mark_trained();
        model.set_transe(std::move(table));
    }
    return model;
}

}  // namespace xbe
