"""Shared fixtures: a small financial tool catalog exercising every schema shape."""

import json

import pytest

from fintoolkit.registry import Library, parse_tool_spec

SEARCH_COMPANY = {
    "name": "search_company_by_name",
    "description": "Fuzzy search by company name keywords, returns matching company codes (company_code)",
    "inputSchema": {
        "properties": {
            "keyword": {"type": "string", "description": "Company name keyword"}
        },
        "required": ["keyword"],
    },
    "outputSchema": {
        "properties": {
            "company_code": {"type": "string", "description": "Internal system company code"},
            "company_full_name": {"type": "string"},
        }
    },
}

REGISTRATION_INFO = {
    "name": "get_company_registration_info",
    "description": "Query company registration information by company code, including registered capital, legal representative, business scope, etc.",
    "inputSchema": {
        "properties": {
            "company_code": {"type": "string", "description": "Internal system company code"}
        },
        "required": ["company_code"],
    },
}

SEARCH_STOCK_CODE = {
    "name": "search_stock_code",
    "description": "Query A-share stock code by company abbreviation or keyword",
    "inputSchema": {
        "properties": {"keyword": {"type": "string"}},
        "required": ["keyword"],
    },
    "outputSchema": {
        "properties": {
            "stock_code": {"type": "string", "description": "6-digit stock code"},
            "stock_name": {"type": "string"},
            "exchange": {"type": "string", "description": "Exchange: SSE or SZSE"},
        }
    },
}

FINANCIAL_METRICS = {
    "name": "get_stock_financial_metrics",
    "description": "Query core financial metrics of a stock, including P/E ratio, P/B ratio, ROE, etc. Supports query by stock code or name",
    "inputSchema": {
        "properties": {
            "stock_code": {"type": "string", "description": "6-digit stock code, e.g., 600519"},
            "stock_name": {"type": "string", "description": "Stock abbreviation, e.g., Kweichow Moutai"},
        },
        "required": [],
    },
}

KLINE_HISTORY = {
    "name": "get_stock_kline_history",
    "description": "Get historical K-line data for a stock, including daily/weekly/monthly K-lines, returns OHLC and volume data",
    "inputSchema": {
        "properties": {
            "stock_code": {"type": "string", "description": "Stock code"},
            "period": {
                "type": "string",
                "description": "K-line period",
                "enum": ["daily", "weekly", "monthly"],
            },
            "start_date": {"type": "string", "description": "Start date"},
            "end_date": {"type": "string", "description": "End date"},
        },
        "required": ["stock_code", "period"],
    },
    "outputSchema": {
        "properties": {
            "kline_data": {"type": "array", "description": "K-line data array"}
        }
    },
}

TECHNICAL_INDICATORS = {
    "name": "calculate_technical_indicators",
    "description": "Calculate technical analysis indicators based on K-line data, such as MACD, KDJ, Bollinger Bands, etc. Note: Must first call get_stock_kline_history to obtain K-line data",
    "inputSchema": {
        "properties": {
            "kline_data": {"type": "array", "description": "K-line data array"},
            "indicators": {"type": "array", "description": "List of indicators to calculate"},
        },
        "required": ["kline_data", "indicators"],
    },
}

INDUSTRY_MONEY_FLOW = {
    "name": "get_industry_money_flow",
    "description": "Query capital inflow/outflow for industry sectors, including institutional and retail capital flows",
    "inputSchema": {
        "properties": {
            "date": {"type": "string", "description": "Query date"},
            "top_n": {"type": "integer", "description": "Return top N industries"},
        },
        "required": [],
    },
    "outputSchema": {
        "properties": {
            "industry_list": {"type": "array"},
            "net_inflow_ranking": {"type": "array"},
        }
    },
}

INDUSTRY_CONSTITUENTS = {
    "name": "get_industry_constituents",
    "description": "Query all constituent stocks and their weights for an industry sector",
    "inputSchema": {
        "properties": {
            "industry_code": {"type": "string", "description": "Industry code"},
            "industry_name": {
                "type": "string",
                "description": "Industry name, e.g., 'New Energy', 'Semiconductor'",
            },
        },
        "required": [],
    },
}

STOCK_PRICE = {
    "name": "get_stock_price",
    "description": "Get the current stock price...",
    "inputSchema": {
        "type": "object",
        "properties": {"symbol": {"type": "string"}},
        "required": ["symbol"],
    },
}

CATALOG = [
    SEARCH_COMPANY,
    REGISTRATION_INFO,
    SEARCH_STOCK_CODE,
    FINANCIAL_METRICS,
    KLINE_HISTORY,
    TECHNICAL_INDICATORS,
    INDUSTRY_MONEY_FLOW,
    INDUSTRY_CONSTITUENTS,
    STOCK_PRICE,
]


def make_spec(doc: dict):
    return parse_tool_spec(json.dumps(doc))


@pytest.fixture
def catalog_specs():
    return [make_spec(doc) for doc in CATALOG]


@pytest.fixture
def catalog_library(catalog_specs):
    return Library(tools=list(catalog_specs), metadata={"source": "fixture"})
