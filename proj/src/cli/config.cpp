#include "darkmatter/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace dm::cli {

namespace {

Json convert(const YAML::Node& node, const std::string& where)
{
    switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
        return nullptr;
    case YAML::NodeType::Sequence: {
        Json out = Json::array();
        for (std::size_t i = 0; i < node.size(); ++i) {
            out.push_back(convert(node[i], where + "[" + std::to_string(i) + "]"));
        }
        return out;
    }
    case YAML::NodeType::Map: {
        Json out = Json::object();
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            if (out.contains(key)) {
                throw SchemaError("config: duplicate key '" + where + key + "'");
            }
            out[key] = convert(kv.second, where + key + ".");
        }
        return out;
    }
    case YAML::NodeType::Scalar:
        break;
    }
    const std::string& text = node.Scalar();
    if (node.Tag() == "!") {
        return text;
    }
    if (text == "true" || text == "false") {
        return text == "true";
    }
    if (text == "null" || text == "~") {
        return nullptr;
    }
    {
        std::istringstream is(text);
        long long v = 0;
        if ((is >> v) && is.eof()) {
            return v;
        }
    }
    {
        std::istringstream is(text);
        double v = 0;
        if ((is >> v) && is.eof()) {
            return v;
        }
    }
    return text;
}

} // namespace

Json parse_config(const std::string& text)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw SchemaError(std::string("config: YAML parse error: ") + e.what());
    }
    if (!root || root.IsNull()) {
        throw SchemaError("config: empty document");
    }
    if (!root.IsMap()) {
        throw SchemaError("config: top level must be a mapping");
    }
    return convert(root, "");
}

Json load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

ConfigReader::ConfigReader(Json node, std::string path) : node_(std::move(node)), path_(std::move(path))
{
    if (node_.is_null()) {
        node_ = Json::object();
    }
    if (!node_.is_object()) {
        throw SchemaError("config: '" + path_ + "' must be a mapping");
    }
}

std::string ConfigReader::where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

bool ConfigReader::has(const std::string& key) const { return node_.contains(key) && !node_[key].is_null(); }

const Json* ConfigReader::lookup(const std::string& key)
{
    used_.insert(key);
    if (!has(key)) {
        return nullptr;
    }
    return &node_[key];
}

namespace {

[[noreturn]] void missing(const std::string& where) { throw SchemaError("config: missing required key '" + where + "'"); }

[[noreturn]] void wrong_type(const std::string& where, const char* want)
{
    throw SchemaError("config: '" + where + "' must be " + want);
}

} // namespace

double ConfigReader::number(const std::string& key, std::optional<double> fallback)
{
    const Json* v = lookup(key);
    double out = 0.0;
    if (!v) {
        if (!fallback) {
            missing(where(key));
        }
        out = *fallback;
    } else if (!v->is_number()) {
        wrong_type(where(key), "a number");
    } else {
        out = v->get<double>();
    }
    if (!std::isfinite(out)) {
        wrong_type(where(key), "finite");
    }
    resolved_[key] = out;
    return out;
}

Index ConfigReader::integer(const std::string& key, std::optional<Index> fallback)
{
    const Json* v = lookup(key);
    Index out = 0;
    if (!v) {
        if (!fallback) {
            missing(where(key));
        }
        out = *fallback;
    } else if (!v->is_number_integer()) {
        wrong_type(where(key), "an integer");
    } else {
        out = v->get<Index>();
    }
    resolved_[key] = out;
    return out;
}

std::uint64_t ConfigReader::seed(const std::string& key, std::optional<std::uint64_t> fallback)
{
    const Json* v = lookup(key);
    std::uint64_t out = 0;
    if (!v) {
        if (!fallback) {
            missing(where(key));
        }
        out = *fallback;
    } else if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
        wrong_type(where(key), "a non-negative integer");
    } else {
        out = v->get<std::uint64_t>();
    }
    resolved_[key] = out;
    return out;
}

bool ConfigReader::boolean(const std::string& key, std::optional<bool> fallback)
{
    const Json* v = lookup(key);
    bool out = false;
    if (!v) {
        if (!fallback) {
            missing(where(key));
        }
        out = *fallback;
    } else if (!v->is_boolean()) {
        wrong_type(where(key), "true or false");
    } else {
        out = v->get<bool>();
    }
    resolved_[key] = out;
    return out;
}

std::string ConfigReader::string(const std::string& key, std::optional<std::string> fallback)
{
    const Json* v = lookup(key);
    std::string out;
    if (!v) {
        if (!fallback) {
            missing(where(key));
        }
        out = *fallback;
    } else if (!v->is_string()) {
        wrong_type(where(key), "a string");
    } else {
        out = v->get<std::string>();
    }
    resolved_[key] = out;
    return out;
}

std::vector<double> ConfigReader::numbers(const std::string& key, std::optional<std::vector<double>> fallback)
{
    const Json* v = lookup(key);
    std::vector<double> out;
    if (!v) {
        if (!fallback) {
            missing(where(key));
        }
        out = *fallback;
    } else if (!v->is_array()) {
        wrong_type(where(key), "a list of numbers");
    } else {
        for (const auto& e : *v) {
            if (!e.is_number()) {
                wrong_type(where(key), "a list of numbers");
            }
            out.push_back(e.get<double>());
        }
    }
    resolved_[key] = out;
    return out;
}

const Json& ConfigReader::raw(const std::string& key)
{
    const Json* v = lookup(key);
    if (!v) {
        missing(where(key));
    }
    return *v;
}

ConfigReader ConfigReader::child(const std::string& key)
{
    const Json* v = lookup(key);
    if (!v) {
        missing(where(key));
    }
    return ConfigReader(*v, where(key));
}

ConfigReader ConfigReader::optional_child(const std::string& key)
{
    const Json* v = lookup(key);
    return ConfigReader(v ? *v : Json::object(), where(key));
}

void ConfigReader::adopt(const std::string& key, ConfigReader& child)
{
    child.finish();
    resolved_[key] = child.resolved();
}

void ConfigReader::set(const std::string& key, Json value)
{
    used_.insert(key);
    resolved_[key] = std::move(value);
}

void ConfigReader::finish()
{
    for (const auto& [key, value] : node_.items()) {
        if (!used_.count(key)) {
            throw SchemaError("config: unknown key '" + where(key) + "'");
        }
    }
}

} // namespace dm::cli
