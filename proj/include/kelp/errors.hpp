#pragma once

#include <stdexcept>
#include <string>

namespace kelp {

// Base for every error raised on bad user input. `kind` is a stable
// machine-readable tag, `field` locates the problem inside the input
// ("resolutions[1].groups[0]", "line 4", ...) when one is known.
class InputError : public std::runtime_error
{
public:
    InputError(std::string kind, const std::string& message, std::string field = {})
        : std::runtime_error(message), kind_(std::move(kind)), field_(std::move(field))
    {
    }

    const std::string& kind() const noexcept { return kind_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string kind_;
    std::string field_;
};

class ParseError : public InputError
{
public:
    explicit ParseError(const std::string& message, std::string field = {})
        : InputError("parse-error", message, std::move(field))
    {
    }
};

class OverlappingGroupsError : public InputError
{
public:
    OverlappingGroupsError(const std::string& message, std::string field = {})
        : InputError("overlapping-groups", message, std::move(field))
    {
    }
};

class CoverageGapError : public InputError
{
public:
    CoverageGapError(const std::string& message, std::string field = {})
        : InputError("coverage-gap", message, std::move(field))
    {
    }
};

class BudgetError : public InputError
{
public:
    explicit BudgetError(const std::string& message)
        : InputError("budget", message)
    {
    }
};

// A routine was called outside its domain (bad alpha, non-interval family
// handed to the interval solver, ...).
class PreconditionError : public InputError
{
public:
    explicit PreconditionError(const std::string& message, std::string field = {})
        : InputError("precondition", message, std::move(field))
    {
    }
};

class NotPositiveDefiniteError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class RecipeInvalidError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

} // namespace kelp
