#include "rtqp/harness.hpp"

int main(int argc, char** argv) { return rtqp::run_cli(argc, argv); }
