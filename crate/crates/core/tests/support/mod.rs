pub mod formula_oracle;
