pub mod hrv_oracle;
