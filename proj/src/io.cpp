#include "ce/io.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace fs = std::filesystem;

namespace ce {

// ---- PNG ----

void write_png(const std::string& path, const Tensor& img) {
    check_arg(img.ndim() == 3 && img.shape[0] == 3, "write_png: expected 3xHxW");
    int H = img.shape[1], W = img.shape[2];
    std::vector<png_byte> buf(static_cast<size_t>(H) * W * 3);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++)
            for (int c = 0; c < 3; c++) {
                float v = std::clamp(img.at(c, y, x), -1.0f, 1.0f);
                buf[(static_cast<size_t>(y) * W + x) * 3 + c] =
                    static_cast<png_byte>(std::lround((v + 1.0f) * 0.5f * 255.0f));
            }
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(W);
    pi.height = static_cast<png_uint_32>(H);
    pi.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("write_png: " + path + ": " + pi.message);
}

Tensor read_png(const std::string& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw IoError("read_png: " + path + ": " + pi.message);
    pi.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = pi.message;
        png_image_free(&pi);
        throw IoError("read_png: " + path + ": " + msg);
    }
    int H = static_cast<int>(pi.height), W = static_cast<int>(pi.width);
    Tensor img({3, H, W});
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++)
            for (int c = 0; c < 3; c++)
                img.at(c, y, x) =
                    buf[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0f * 2.0f - 1.0f;
    return img;
}

// ---- digests ----

std::string sha256_hex(const void* data, size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    if (!EVP_Digest(data, n, md, &md_len, EVP_sha256(), nullptr))
        throw IoError("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned int i = 0; i < md_len; i++) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for digest: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string content = ss.str();
    return sha256_hex(content.data(), content.size());
}

// ---- plain files ----

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << content;
    if (!f) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---- model config ----

json config_to_json(const ModelConfig& cfg) {
    return json{{"T", cfg.T},
                {"image_ch", cfg.image_ch},
                {"image_size", cfg.image_size},
                {"latent_ch", cfg.latent_ch},
                {"latent_size", cfg.latent_size},
                {"d_text", cfg.d_text},
                {"text_layers", cfg.text_layers},
                {"max_len", cfg.max_len}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.T = j.at("T").get<int>();
    cfg.image_ch = j.at("image_ch").get<int>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.latent_ch = j.at("latent_ch").get<int>();
    cfg.latent_size = j.at("latent_size").get<int>();
    cfg.d_text = j.at("d_text").get<int>();
    cfg.text_layers = j.at("text_layers").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    return cfg;
}

// ---- checkpoints ----

namespace {
constexpr char kMagic[4] = {'C', 'E', 'D', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ParamStoreT<float>& params,
                     const json& meta) {
    std::vector<float> payload;
    ojson table = ojson::array();
    for (const auto& e : params.entries) {
        ojson row;
        row["name"] = e.name;
        row["group"] = e.group;
        row["shape"] = e.var.val().shape;
        row["offset"] = payload.size();
        row["numel"] = e.var.val().numel();
        table.push_back(row);
        payload.insert(payload.end(), e.var.val().data.begin(), e.var.val().data.end());
    }
    ojson header;
    header["tool"] = kToolVersion;
    header["meta"] = meta;
    header["tensors"] = table;
    header["payload_sha256"] =
        sha256_hex(payload.data(), payload.size() * sizeof(float));
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for write: " + path);
    f.write(kMagic, 4);
    uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    uint32_t ver = 0;
    uint64_t hlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path);
    if (ver != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(ver));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("truncated checkpoint header: " + path);
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header: " + std::string(e.what()));
    }
    std::vector<float> payload;
    {
        std::vector<char> rest((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
        if (rest.size() % sizeof(float) != 0)
            throw IoError("checkpoint payload size not a float multiple: " + path);
        payload.resize(rest.size() / sizeof(float));
        std::memcpy(payload.data(), rest.data(), rest.size());
    }
    std::string digest = sha256_hex(payload.data(), payload.size() * sizeof(float));
    if (digest != header.at("payload_sha256").get<std::string>())
        throw IoError("checkpoint payload digest mismatch: " + path);

    LoadedCheckpoint ck;
    ck.meta = header.at("meta");
    for (const auto& row : header.at("tensors")) {
        std::string name = row.at("name").get<std::string>();
        std::vector<int> shape = row.at("shape").get<std::vector<int>>();
        size_t offset = row.at("offset").get<size_t>();
        size_t numel = row.at("numel").get<size_t>();
        if (offset + numel > payload.size())
            throw IoError("checkpoint tensor out of bounds: " + name);
        Tensor t;
        t.shape = shape;
        t.data.assign(payload.begin() + static_cast<long>(offset),
                      payload.begin() + static_cast<long>(offset + numel));
        if (t.numel() != Tensor::numel_of(shape))
            throw IoError("checkpoint tensor shape mismatch: " + name);
        ck.tensors.emplace(name, std::move(t));
        ck.tensor_groups.emplace(name, row.at("group").get<std::string>());
    }
    return ck;
}

json model_meta(const DiffusionModel& m, const std::string& kind) {
    return json{{"kind", kind},
                {"config", config_to_json(m.cfg)},
                {"vocab", m.vocab.words()}};
}

void fill_params(ParamStoreT<float>& params, const LoadedCheckpoint& ck) {
    if (ck.tensors.size() != params.entries.size())
        throw IoError("checkpoint parameter count mismatch: file has " +
                      std::to_string(ck.tensors.size()) + ", model needs " +
                      std::to_string(params.entries.size()));
    for (auto& e : params.entries) {
        auto it = ck.tensors.find(e.name);
        if (it == ck.tensors.end())
            throw IoError("checkpoint missing parameter: " + e.name);
        if (it->second.shape != e.var.val().shape)
            throw IoError("checkpoint shape mismatch for " + e.name);
        e.var.mutable_val() = it->second;
    }
}

DiffusionModel model_from_checkpoint(const LoadedCheckpoint& ck) {
    std::string kind = ck.meta.at("kind").get<std::string>();
    if (kind != "pretrained" && kind != "customized")
        throw IoError("checkpoint kind '" + kind + "' is not a diffusion model");
    ModelConfig cfg = config_from_json(ck.meta.at("config"));
    Vocabulary vocab =
        Vocabulary::from_words(ck.meta.at("vocab").get<std::vector<std::string>>());
    DiffusionModel m(cfg, std::move(vocab), /*init_seed=*/0);
    fill_params(m.params, ck);
    return m;
}

// ---- corpus persistence ----

void save_corpus(const std::string& dir, const std::vector<CaptionedImage>& items) {
    check_arg(!items.empty(), "save_corpus: empty corpus");
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "filename,caption,class,modifier,held_out\n";
    for (size_t i = 0; i < items.size(); i++) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05zu.png", i);
        const auto& it = items[i];
        check_arg(it.caption.find(',') == std::string::npos,
                  "caption may not contain commas");
        write_png((fs::path(dir) / name).string(), it.image);
        csv << name << ',' << it.caption << ',' << it.class_noun << ',' << it.modifier
            << ',' << (it.held_out ? 1 : 0) << '\n';
    }
    write_text_file((fs::path(dir) / "index.csv").string(), csv.str());
}

std::vector<CaptionedImage> load_corpus(const std::string& dir) {
    std::string index = read_text_file((fs::path(dir) / "index.csv").string());
    std::istringstream in(index);
    std::string line;
    if (!std::getline(in, line) || line != "filename,caption,class,modifier,held_out")
        throw IoError("corpus index has an unexpected header: " + dir);
    std::vector<CaptionedImage> items;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, ',')) cols.push_back(col);
        if (cols.size() != 5) throw IoError("malformed corpus index row: " + line);
        CaptionedImage item;
        item.image = read_png((fs::path(dir) / cols[0]).string());
        item.caption = cols[1];
        item.class_noun = cols[2];
        item.modifier = cols[3];
        item.held_out = cols[4] == "1";
        items.push_back(std::move(item));
    }
    if (items.empty()) throw IoError("corpus index lists no items: " + dir);
    return items;
}

}  // namespace ce
