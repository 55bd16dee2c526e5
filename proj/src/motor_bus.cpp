#include "orca/motor_bus.hpp"

namespace orca::bus {

BusArbiter::Lease& BusArbiter::Lease::operator=(Lease&& other) noexcept {
    if (this != &other) {
        release();
        owner_ = other.owner_;
        other.owner_ = nullptr;
    }
    return *this;
}

void BusArbiter::Lease::release() {
    if (!owner_) return;
    std::lock_guard lock(owner_->mu_);
    owner_->holder_.reset();
    owner_ = nullptr;
}

std::optional<BusArbiter::Lease> BusArbiter::try_acquire(const std::string& who) {
    std::lock_guard lock(mu_);
    if (holder_) return std::nullopt;
    holder_ = who;
    return Lease(this);
}

BusArbiter::Lease BusArbiter::acquire_or_throw(const std::string& who) {
    std::lock_guard lock(mu_);
    if (holder_) throw BusBusyError(*holder_);
    holder_ = who;
    return Lease(this);
}

std::optional<std::string> BusArbiter::holder() const {
    std::lock_guard lock(mu_);
    return holder_;
}

}  // namespace orca::bus
