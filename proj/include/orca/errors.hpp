#pragma once

#include <stdexcept>
#include <string>

namespace orca {

// Base error. `code()` is a short machine-readable tag that the daemon
// forwards verbatim in error responses.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class ConfigError : public Error {
public:
    enum class Kind { parse, schema, invariant };

    ConfigError(Kind kind, const std::string& message)
        : Error(kind_code(kind), message), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    static std::string kind_code(Kind k) {
        switch (k) {
            case Kind::parse: return "parse_error";
            case Kind::schema: return "schema_error";
            case Kind::invariant: return "invariant_error";
        }
        return "config_error";
    }
    Kind kind_;
};

class UnknownJointError : public Error {
public:
    explicit UnknownJointError(const std::string& joint)
        : Error("unknown_joint", "unknown joint '" + joint + "'"), joint_(joint) {}
    const std::string& joint() const noexcept { return joint_; }

private:
    std::string joint_;
};

class BusError : public Error {
public:
    using Error::Error;
};

class BusBusyError : public BusError {
public:
    explicit BusBusyError(const std::string& holder)
        : BusError("busy", "bus is leased by '" + holder + "'") {}
};

}  // namespace orca
