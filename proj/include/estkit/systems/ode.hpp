#pragma once

namespace estkit {

enum class Discretization { forward_euler, rk4 };

// x + dt * f(x)
template <class State, class Field>
State euler_step(const Field& f, const State& x, double dt) {
  return x + dt * f(x);
}

// Classical fourth-order Runge-Kutta step of an autonomous field.
template <class State, class Field>
State rk4_step(const Field& f, const State& x, double dt) {
  const State k1 = f(x);
  const State k2 = f(State(x + (0.5 * dt) * k1));
  const State k3 = f(State(x + (0.5 * dt) * k2));
  const State k4 = f(State(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class State, class Field>
State discrete_step(Discretization scheme, const Field& f, const State& x, double dt) {
  return scheme == Discretization::rk4 ? rk4_step(f, x, dt) : euler_step(f, x, dt);
}

}  // namespace estkit
