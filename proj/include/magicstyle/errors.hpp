#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace magicstyle {

// Every failure carries a short machine-readable category ("shape",
// "cache-miss", ...) used by the CLI for its single-line error report.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& what) : Error("parameter", what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class ConstraintError : public Error {
public:
    explicit ConstraintError(const std::string& what) : Error("constraint", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class SiteError : public Error {
public:
    explicit SiteError(const std::string& what) : Error("site", what) {}
};

class AdapterContractError : public Error {
public:
    explicit AdapterContractError(const std::string& what) : Error("adapter-contract", what) {}
};

class DuplicateEntryError : public Error {
public:
    explicit DuplicateEntryError(const std::string& what) : Error("duplicate-entry", what) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class CacheMissError : public Error {
public:
    CacheMissError(std::uint32_t timestep, std::string site, std::string role)
        : Error("cache-miss", "no cached " + role + " features for timestep " +
                                  std::to_string(timestep) + " at site '" + site + "'"),
          timestep_(timestep),
          site_(std::move(site)),
          role_(std::move(role)) {}

    std::uint32_t timestep() const noexcept { return timestep_; }
    const std::string& site() const noexcept { return site_; }
    const std::string& role() const noexcept { return role_; }

private:
    std::uint32_t timestep_;
    std::string site_;
    std::string role_;
};

class FormatError : public Error {
public:
    FormatError(std::size_t offset, const std::string& what)
        : Error("format", what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class VersionError : public Error {
public:
    VersionError(std::uint32_t found, std::uint32_t expected)
        : Error("version", "unsupported file version " + std::to_string(found) + " (expected " +
                               std::to_string(expected) + ")"),
          found_(found) {}

    std::uint32_t found() const noexcept { return found_; }

private:
    std::uint32_t found_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace magicstyle
